// Brute-force reference implementations used only by tests. Everything
// here recomputes likelihoods by explicit path enumeration with dense
// matrix algebra, independent of the library's recursions and caches.
#ifndef SAR_TESTS_ORACLE_HPP
#define SAR_TESTS_ORACLE_HPP

#include "sar/common.hpp"
#include "sar/hhmm.hpp"

#include <cmath>
#include <vector>

namespace sar::oracle {

// Gaussian marginal over observed dims via explicit inverse; missing
// handling mirrors the substitution rules but is written from the
// closed-form densities.
inline double ref_emission_loglik(const HhmmParams& p, int state,
                              const ObservationSequence& seq, Eigen::Index t) {
  constexpr double kLog2Pi = 1.8378770664093454836;
  double ll = 0.0;
  const Eigen::Index mc = seq.n_continuous();
  if (mc > 0) {
    std::vector<int> obs;
    for (Eigen::Index c = 0; c < mc; ++c) {
      if (seq.cont_mask(t, c)) obs.push_back(static_cast<int>(c));
    }
    const Matrix& cov = p.covariances[static_cast<size_t>(state)];
    if (obs.empty()) {
      // density at the state mean
      ll += -0.5 * (static_cast<double>(mc) * kLog2Pi +
                    std::log(cov.determinant()));
    } else {
      const auto k = static_cast<Eigen::Index>(obs.size());
      Matrix sub(k, k);
      Vector diff(k);
      for (Eigen::Index a = 0; a < k; ++a) {
        diff[a] = seq.continuous(t, obs[static_cast<size_t>(a)]) -
                  p.means(state, obs[static_cast<size_t>(a)]);
        for (Eigen::Index b = 0; b < k; ++b) {
          sub(a, b) = cov(obs[static_cast<size_t>(a)], obs[static_cast<size_t>(b)]);
        }
      }
      ll += -0.5 * (static_cast<double>(k) * kLog2Pi +
                    std::log(sub.determinant()) +
                    diff.dot(sub.inverse() * diff));
    }
  }
  for (Eigen::Index m = 0; m < seq.n_discrete(); ++m) {
    const auto& d = p.disc_probs[static_cast<size_t>(m)];
    if (seq.disc_mask(t, m)) {
      ll += std::log(d(state, seq.discrete(t, m)));
    } else {
      ll += std::log(d.row(state).maxCoeff());
    }
  }
  return ll;
}

inline double path_score(const HhmmParams& p, const ObservationSequence& seq,
                         const std::vector<int>& path) {
  double score = std::log(p.pi[path[0]]) + ref_emission_loglik(p, path[0], seq, 0);
  for (size_t t = 1; t < path.size(); ++t) {
    score += std::log(p.trans(path[t - 1], path[t])) +
             ref_emission_loglik(p, path[t], seq, static_cast<Eigen::Index>(t));
  }
  return score;
}

// Iterates all I^T paths in lexicographic order.
template <typename Fn>
void for_each_path(int n_states, Eigen::Index T, Fn&& fn) {
  std::vector<int> path(static_cast<size_t>(T), 0);
  while (true) {
    fn(path);
    Eigen::Index pos = T - 1;
    while (pos >= 0) {
      if (++path[static_cast<size_t>(pos)] < n_states) break;
      path[static_cast<size_t>(pos)] = 0;
      --pos;
    }
    if (pos < 0) break;
  }
}

inline double enumerate_loglik(const HhmmParams& p, const ObservationSequence& seq) {
  std::vector<double> scores;
  for_each_path(p.n_states(), seq.n_slots(), [&](const std::vector<int>& path) {
    scores.push_back(path_score(p, seq, path));
  });
  return log_sum_exp(scores.data(), static_cast<Eigen::Index>(scores.size()));
}

struct BestPath {
  std::vector<int> path;
  double score;
};

// Lexicographic enumeration with strict improvement keeps the
// lexicographically-smallest maximizer, matching the decoder's tie rule.
inline BestPath enumerate_best_path(const HhmmParams& p,
                                    const ObservationSequence& seq) {
  BestPath best;
  best.score = -std::numeric_limits<double>::infinity();
  for_each_path(p.n_states(), seq.n_slots(), [&](const std::vector<int>& path) {
    const double s = path_score(p, seq, path);
    if (s > best.score) {
      best.score = s;
      best.path = path;
    }
  });
  return best;
}

inline Matrix enumerate_gamma(const HhmmParams& p, const ObservationSequence& seq) {
  const Eigen::Index T = seq.n_slots();
  const int n = p.n_states();
  Matrix weights = Matrix::Zero(T, n);
  double total = 0.0;
  for_each_path(n, T, [&](const std::vector<int>& path) {
    const double w = std::exp(path_score(p, seq, path));
    total += w;
    for (Eigen::Index t = 0; t < T; ++t) weights(t, path[static_cast<size_t>(t)]) += w;
  });
  return weights / total;
}

inline std::vector<Matrix> enumerate_xi(const HhmmParams& p,
                                        const ObservationSequence& seq) {
  const Eigen::Index T = seq.n_slots();
  const int n = p.n_states();
  std::vector<Matrix> xi(static_cast<size_t>(T - 1), Matrix::Zero(n, n));
  double total = 0.0;
  for_each_path(n, T, [&](const std::vector<int>& path) {
    const double w = std::exp(path_score(p, seq, path));
    total += w;
    for (Eigen::Index t = 0; t + 1 < T; ++t) {
      xi[static_cast<size_t>(t)](path[static_cast<size_t>(t)],
                                 path[static_cast<size_t>(t + 1)]) += w;
    }
  });
  for (auto& slice : xi) slice /= total;
  return xi;
}

// Random valid model + sequence generators for property loops.
inline Vector random_simplex(Rng& rng, int n) {
  Vector v(n);
  for (int i = 0; i < n; ++i) v[i] = 0.05 + rng.uniform();
  return v / v.sum();
}

inline HhmmParams random_params(Rng& rng, int n_states, int mc, int md,
                                int n_symbols = 2) {
  HhmmParams p;
  p.pi = random_simplex(rng, n_states);
  p.trans.resize(n_states, n_states);
  for (int i = 0; i < n_states; ++i) {
    p.trans.row(i) = random_simplex(rng, n_states).transpose();
  }
  p.means.resize(n_states, mc);
  for (int i = 0; i < n_states; ++i) {
    for (int c = 0; c < mc; ++c) p.means(i, c) = 4.0 * (rng.uniform() - 0.5);
  }
  for (int i = 0; i < n_states; ++i) {
    Matrix a(mc, mc);
    for (int r = 0; r < mc; ++r) {
      for (int c = 0; c < mc; ++c) a(r, c) = rng.uniform() - 0.5;
    }
    Matrix cov = a * a.transpose();
    cov.diagonal().array() += 0.3 + rng.uniform();
    p.covariances.push_back(cov);
  }
  for (int m = 0; m < md; ++m) {
    Matrix d(n_states, n_symbols);
    for (int i = 0; i < n_states; ++i) {
      d.row(i) = random_simplex(rng, n_symbols).transpose();
    }
    p.disc_probs.push_back(d);
    p.frozen.push_back(BoolMatrix::Constant(n_states, n_symbols, false));
  }
  return p;
}

inline ObservationSequence random_sequence(Rng& rng, const HhmmParams& p,
                                           Eigen::Index T, double missing_rate) {
  auto [seq, states] = sample(p, T, rng.next_u64());
  (void)states;
  for (Eigen::Index t = 0; t < T; ++t) {
    for (Eigen::Index c = 0; c < seq.n_continuous(); ++c) {
      if (rng.uniform() < missing_rate) seq.cont_mask(t, c) = false;
    }
    for (Eigen::Index m = 0; m < seq.n_discrete(); ++m) {
      if (rng.uniform() < missing_rate) seq.disc_mask(t, m) = false;
    }
  }
  return seq;
}

}  // namespace sar::oracle

#endif
