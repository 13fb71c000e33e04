#include "sar/hhmm.hpp"

#include "sar/kmeans.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_map>

namespace sar {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

}  // namespace

ObservationSequence make_sequence(Eigen::Index n_slots, Eigen::Index n_continuous,
                                  Eigen::Index n_discrete) {
  ObservationSequence seq;
  seq.continuous = Matrix::Zero(n_slots, n_continuous);
  seq.discrete = IntMatrix::Zero(n_slots, n_discrete);
  seq.cont_mask = BoolMatrix::Constant(n_slots, n_continuous, false);
  seq.disc_mask = BoolMatrix::Constant(n_slots, n_discrete, false);
  return seq;
}

void validate_sequence(const ObservationSequence& seq) {
  if (seq.cont_mask.rows() != seq.continuous.rows() ||
      seq.cont_mask.cols() != seq.continuous.cols() ||
      seq.disc_mask.rows() != seq.discrete.rows() ||
      seq.disc_mask.cols() != seq.discrete.cols()) {
    throw InvalidInputError("observation masks must match their data shapes");
  }
  if (seq.continuous.rows() != seq.discrete.rows()) {
    throw InvalidInputError(
        "continuous and discrete blocks must cover the same slots");
  }
  for (Eigen::Index t = 0; t < seq.continuous.rows(); ++t) {
    for (Eigen::Index c = 0; c < seq.continuous.cols(); ++c) {
      if (seq.cont_mask(t, c) && !std::isfinite(seq.continuous(t, c))) {
        throw InvalidInputError("observed continuous values must be finite");
      }
    }
    for (Eigen::Index m = 0; m < seq.discrete.cols(); ++m) {
      if (seq.disc_mask(t, m) && seq.discrete(t, m) < 0) {
        throw InvalidInputError("observed symbols must be non-negative");
      }
    }
  }
}

void validate_params(const HhmmParams& params) {
  const int n = params.n_states();
  if (n < 1) throw InvalidInputError("model needs at least one state");
  if (params.trans.rows() != n || params.trans.cols() != n) {
    throw InvalidInputError("transition matrix must be n_states x n_states");
  }
  if (params.means.rows() != n) {
    throw InvalidInputError("means must have one row per state");
  }
  if (static_cast<int>(params.covariances.size()) != n) {
    throw InvalidInputError("need one covariance matrix per state");
  }
  const Eigen::Index mc = params.means.cols();
  for (const auto& cov : params.covariances) {
    if (cov.rows() != mc || cov.cols() != mc) {
      throw InvalidInputError("covariance shape must match the continuous dims");
    }
  }
  if (params.frozen.size() != params.disc_probs.size()) {
    throw InvalidInputError("frozen mask must mirror disc_probs");
  }
  constexpr double tol = 1e-9;
  if (std::abs(params.pi.sum() - 1.0) > tol) {
    throw InvalidInputError("pi must sum to 1");
  }
  if ((params.pi.array() < -tol).any()) {
    throw InvalidInputError("pi entries must be non-negative");
  }
  for (int i = 0; i < n; ++i) {
    if (std::abs(params.trans.row(i).sum() - 1.0) > tol) {
      throw InvalidInputError("transition rows must sum to 1");
    }
  }
  for (size_t m = 0; m < params.disc_probs.size(); ++m) {
    const auto& d = params.disc_probs[m];
    if (d.rows() != n) {
      throw InvalidInputError("disc_probs must have one row per state");
    }
    if (params.frozen[m].rows() != d.rows() || params.frozen[m].cols() != d.cols()) {
      throw InvalidInputError("frozen mask shape must match disc_probs");
    }
    for (int i = 0; i < n; ++i) {
      if (std::abs(d.row(i).sum() - 1.0) > tol) {
        throw InvalidInputError("discrete emission rows must sum to 1");
      }
    }
  }
}

void check_compatible(const HhmmParams& params, const ObservationSequence& seq) {
  if (seq.n_continuous() != params.n_continuous()) {
    throw InvalidInputError("sequence continuous dims do not match the model");
  }
  if (seq.n_discrete() != params.n_discrete()) {
    throw InvalidInputError("sequence discrete channels do not match the model");
  }
  for (Eigen::Index t = 0; t < seq.n_slots(); ++t) {
    for (Eigen::Index m = 0; m < seq.n_discrete(); ++m) {
      if (seq.disc_mask(t, m) && seq.discrete(t, m) >= params.n_symbols(m)) {
        throw InvalidInputError("observed symbol outside the channel alphabet");
      }
    }
  }
}

void validate_fit_config(const FitConfig& config) {
  if (config.max_iters < 1) throw InvalidInputError("max_iters must be >= 1");
  if (!(config.rel_tol > 0)) throw InvalidInputError("rel_tol must be > 0");
  if (!(config.cov_floor > 0)) throw InvalidInputError("cov_floor must be > 0");
}

namespace {

// Per-state Gaussian machinery for one missingness pattern (bitmask of
// observed dims). The conditional gain Sigma_mo * Sigma_oo^-1 serves both
// imputation and the M-step completion of missing cells.
struct Pattern {
  std::vector<int> obs;
  std::vector<int> miss;
  Eigen::LLT<Matrix> llt_oo;
  double marginal_const = 0.0;  // -0.5 (k log 2pi + log|Sigma_oo|)
  Matrix cond_gain;             // |miss| x |obs|
  Matrix cond_cov;              // |miss| x |miss|, Sigma_mm - gain * Sigma_om
};

class EmissionEvaluator {
 public:
  EmissionEvaluator(const HhmmParams& params, MissingMode mode)
      : params_(params), mode_(mode), patterns_(params.n_states()) {
    const Eigen::Index mc = params.n_continuous();
    if (mc > 63) {
      throw InvalidInputError("more than 63 continuous channels unsupported");
    }
    full_mask_ = mc == 0 ? 0 : ((std::uint64_t{1} << mc) - 1);
    ml_symbol_.resize(params.n_discrete());
    ml_logprob_.resize(params.n_discrete());
    for (Eigen::Index m = 0; m < params.n_discrete(); ++m) {
      const auto& d = params.disc_probs[m];
      ml_symbol_[m].resize(params.n_states());
      ml_logprob_[m].resize(params.n_states());
      for (int i = 0; i < params.n_states(); ++i) {
        Eigen::Index best = 0;
        for (Eigen::Index j = 1; j < d.cols(); ++j) {
          if (d(i, j) > d(i, best)) best = j;
        }
        ml_symbol_[m][i] = static_cast<int>(best);
        ml_logprob_[m][i] = std::log(d(i, best));
      }
    }
  }

  std::uint64_t row_mask(const ObservationSequence& seq, Eigen::Index t) const {
    std::uint64_t mask = 0;
    for (Eigen::Index c = 0; c < seq.n_continuous(); ++c) {
      if (seq.cont_mask(t, c)) mask |= std::uint64_t{1} << c;
    }
    return mask;
  }

  const Pattern& pattern(int state, std::uint64_t mask) {
    auto& cache = patterns_[state];
    auto it = cache.find(mask);
    if (it != cache.end()) return it->second;
    Pattern p;
    const Eigen::Index mc = params_.n_continuous();
    for (Eigen::Index c = 0; c < mc; ++c) {
      if (mask & (std::uint64_t{1} << c)) {
        p.obs.push_back(static_cast<int>(c));
      } else {
        p.miss.push_back(static_cast<int>(c));
      }
    }
    const Matrix& cov = params_.covariances[state];
    const auto n_obs = static_cast<Eigen::Index>(p.obs.size());
    if (n_obs > 0) {
      Matrix sigma_oo(n_obs, n_obs);
      for (Eigen::Index a = 0; a < n_obs; ++a) {
        for (Eigen::Index b = 0; b < n_obs; ++b) {
          sigma_oo(a, b) = cov(p.obs[a], p.obs[b]);
        }
      }
      p.llt_oo.compute(sigma_oo);
      if (p.llt_oo.info() != Eigen::Success) {
        throw NumericalError("covariance for state " + std::to_string(state) +
                             " is not positive definite");
      }
      double logdet = 0.0;
      for (Eigen::Index a = 0; a < n_obs; ++a) {
        logdet += 2.0 * std::log(p.llt_oo.matrixL()(a, a));
      }
      p.marginal_const = -0.5 * (static_cast<double>(n_obs) * kLog2Pi + logdet);
      if (!p.miss.empty()) {
        const auto n_miss = static_cast<Eigen::Index>(p.miss.size());
        Matrix sigma_mo(n_miss, n_obs);
        Matrix sigma_mm(n_miss, n_miss);
        for (Eigen::Index a = 0; a < n_miss; ++a) {
          for (Eigen::Index b = 0; b < n_obs; ++b) {
            sigma_mo(a, b) = cov(p.miss[a], p.obs[b]);
          }
          for (Eigen::Index b = 0; b < n_miss; ++b) {
            sigma_mm(a, b) = cov(p.miss[a], p.miss[b]);
          }
        }
        p.cond_gain = p.llt_oo.solve(sigma_mo.transpose()).transpose();
        p.cond_cov = sigma_mm - p.cond_gain * sigma_mo.transpose();
      }
    } else if (mc > 0) {
      // fully missing: density at the state mean needs log|Sigma|
      Eigen::LLT<Matrix> full(cov);
      if (full.info() != Eigen::Success) {
        throw NumericalError("covariance for state " + std::to_string(state) +
                             " is not positive definite");
      }
      double logdet = 0.0;
      for (Eigen::Index a = 0; a < mc; ++a) {
        logdet += 2.0 * std::log(full.matrixL()(a, a));
      }
      p.marginal_const = -0.5 * (static_cast<double>(mc) * kLog2Pi + logdet);
    }
    return cache.emplace(mask, std::move(p)).first->second;
  }

  double state_loglik(const ObservationSequence& seq, Eigen::Index t, int state) {
    double ll = 0.0;
    const Eigen::Index mc = seq.n_continuous();
    if (mc > 0) {
      const std::uint64_t mask = row_mask(seq, t);
      const Pattern& p = pattern(state, mask);
      if (p.obs.empty()) {
        if (mode_ == MissingMode::kMeanSubstitute) ll += p.marginal_const;
      } else {
        Vector diff(static_cast<Eigen::Index>(p.obs.size()));
        for (size_t a = 0; a < p.obs.size(); ++a) {
          diff[static_cast<Eigen::Index>(a)] =
              seq.continuous(t, p.obs[a]) - params_.means(state, p.obs[a]);
        }
        const double quad = diff.dot(p.llt_oo.solve(diff));
        ll += p.marginal_const - 0.5 * quad;
      }
    }
    for (Eigen::Index m = 0; m < seq.n_discrete(); ++m) {
      if (seq.disc_mask(t, m)) {
        ll += std::log(params_.disc_probs[m](state, seq.discrete(t, m)));
      } else if (mode_ == MissingMode::kMeanSubstitute) {
        ll += ml_logprob_[m][state];
      }
    }
    return ll;
  }

  // Observed dims copied through, missing dims completed with the
  // state-conditional mean (state mean when nothing is observed).
  Vector completed_row(const ObservationSequence& seq, Eigen::Index t, int state) {
    const Eigen::Index mc = seq.n_continuous();
    Vector out(mc);
    const std::uint64_t mask = row_mask(seq, t);
    if (mask == full_mask_) {
      for (Eigen::Index c = 0; c < mc; ++c) out[c] = seq.continuous(t, c);
      return out;
    }
    const Pattern& p = pattern(state, mask);
    if (p.obs.empty()) {
      for (Eigen::Index c = 0; c < mc; ++c) out[c] = params_.means(state, c);
      return out;
    }
    Vector diff(static_cast<Eigen::Index>(p.obs.size()));
    for (size_t a = 0; a < p.obs.size(); ++a) {
      const int c = p.obs[a];
      out[c] = seq.continuous(t, c);
      diff[static_cast<Eigen::Index>(a)] = out[c] - params_.means(state, c);
    }
    Vector cond = p.cond_gain * diff;
    for (size_t a = 0; a < p.miss.size(); ++a) {
      const int c = p.miss[a];
      out[c] = params_.means(state, c) + cond[static_cast<Eigen::Index>(a)];
    }
    return out;
  }

  int ml_symbol(Eigen::Index channel, int state) const {
    return ml_symbol_[channel][state];
  }

 private:
  const HhmmParams& params_;
  MissingMode mode_;
  std::uint64_t full_mask_ = 0;
  std::vector<std::unordered_map<std::uint64_t, Pattern>> patterns_;
  std::vector<std::vector<int>> ml_symbol_;
  std::vector<std::vector<double>> ml_logprob_;
};

Matrix emissions_table(const HhmmParams& params, const ObservationSequence& seq,
                       MissingMode mode) {
  EmissionEvaluator ev(params, mode);
  const Eigen::Index T = seq.n_slots();
  const int n = params.n_states();
  Matrix loge(T, n);
  for (Eigen::Index t = 0; t < T; ++t) {
    for (int i = 0; i < n; ++i) loge(t, i) = ev.state_loglik(seq, t, i);
  }
  return loge;
}

void check_nonempty(const ObservationSequence& seq) {
  if (seq.n_slots() < 1) {
    throw InvalidInputError("sequence must contain at least one slot");
  }
}

std::pair<Matrix, double> forward_from_emissions(const HhmmParams& params,
                                                 const Matrix& loge) {
  const Eigen::Index T = loge.rows();
  const int n = params.n_states();
  Matrix la(T, n);
  Matrix log_trans = params.trans.array().log();
  for (int i = 0; i < n; ++i) {
    la(0, i) = std::log(params.pi[i]) + loge(0, i);
  }
  Vector work(n);
  for (Eigen::Index t = 1; t < T; ++t) {
    for (int j = 0; j < n; ++j) {
      for (int i = 0; i < n; ++i) work[i] = la(t - 1, i) + log_trans(i, j);
      la(t, j) = log_sum_exp(work) + loge(t, j);
    }
  }
  double loglik = log_sum_exp(la.row(T - 1).transpose());
  return {std::move(la), loglik};
}

Matrix backward_from_emissions(const HhmmParams& params, const Matrix& loge) {
  const Eigen::Index T = loge.rows();
  const int n = params.n_states();
  Matrix lb(T, n);
  Matrix log_trans = params.trans.array().log();
  lb.row(T - 1).setZero();
  Vector work(n);
  for (Eigen::Index t = T - 2; t >= 0; --t) {
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        work[j] = log_trans(i, j) + loge(t + 1, j) + lb(t + 1, j);
      }
      lb(t, i) = log_sum_exp(work);
    }
  }
  return lb;
}

void check_finite_loglik(double loglik) {
  if (!std::isfinite(loglik)) {
    throw NumericalError(
        "observation sequence has zero probability under the model");
  }
}

}  // namespace

double emission_loglik(const HhmmParams& params, int state,
                       const ObservationSequence& seq, Eigen::Index t,
                       MissingMode mode) {
  validate_params(params);
  validate_sequence(seq);
  check_compatible(params, seq);
  if (state < 0 || state >= params.n_states()) {
    throw InvalidInputError("state index out of range");
  }
  if (t < 0 || t >= seq.n_slots()) {
    throw InvalidInputError("slot index out of range");
  }
  EmissionEvaluator ev(params, mode);
  return ev.state_loglik(seq, t, state);
}

Matrix emission_loglik_matrix(const HhmmParams& params,
                              const ObservationSequence& seq, MissingMode mode) {
  validate_params(params);
  validate_sequence(seq);
  check_compatible(params, seq);
  check_nonempty(seq);
  return emissions_table(params, seq, mode);
}

std::pair<Matrix, double> log_forward(const HhmmParams& params,
                                      const ObservationSequence& seq,
                                      MissingMode mode) {
  validate_params(params);
  validate_sequence(seq);
  check_compatible(params, seq);
  check_nonempty(seq);
  Matrix loge = emissions_table(params, seq, mode);
  auto [la, loglik] = forward_from_emissions(params, loge);
  check_finite_loglik(loglik);
  return {std::move(la), loglik};
}

Matrix log_backward(const HhmmParams& params, const ObservationSequence& seq,
                    MissingMode mode) {
  validate_params(params);
  validate_sequence(seq);
  check_compatible(params, seq);
  check_nonempty(seq);
  Matrix loge = emissions_table(params, seq, mode);
  return backward_from_emissions(params, loge);
}

PosteriorTables posteriors(const HhmmParams& params, const ObservationSequence& seq,
                           MissingMode mode) {
  validate_params(params);
  validate_sequence(seq);
  check_compatible(params, seq);
  check_nonempty(seq);
  Matrix loge = emissions_table(params, seq, mode);
  auto [la, loglik] = forward_from_emissions(params, loge);
  check_finite_loglik(loglik);
  Matrix lb = backward_from_emissions(params, loge);

  PosteriorTables tables;
  const Eigen::Index T = seq.n_slots();
  const int n = params.n_states();
  tables.gamma.resize(T, n);
  for (Eigen::Index t = 0; t < T; ++t) {
    for (int i = 0; i < n; ++i) {
      tables.gamma(t, i) = std::exp(la(t, i) + lb(t, i) - loglik);
    }
  }
  Matrix log_trans = params.trans.array().log();
  tables.xi.reserve(T > 0 ? static_cast<size_t>(T - 1) : 0);
  for (Eigen::Index t = 0; t + 1 < T; ++t) {
    Matrix slice(n, n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        slice(i, j) = std::exp(la(t, i) + log_trans(i, j) + loge(t + 1, j) +
                               lb(t + 1, j) - loglik);
      }
    }
    tables.xi.push_back(std::move(slice));
  }
  tables.log_alpha = std::move(la);
  tables.log_beta = std::move(lb);
  tables.loglik = loglik;
  return tables;
}

std::vector<int> viterbi(const HhmmParams& params, const ObservationSequence& seq,
                         MissingMode mode) {
  validate_params(params);
  validate_sequence(seq);
  check_compatible(params, seq);
  check_nonempty(seq);
  Matrix loge = emissions_table(params, seq, mode);
  const Eigen::Index T = seq.n_slots();
  const int n = params.n_states();
  Matrix log_trans = params.trans.array().log();
  Matrix delta(T, n);
  IntMatrix psi(T, n);
  for (int i = 0; i < n; ++i) {
    delta(0, i) = std::log(params.pi[i]) + loge(0, i);
  }
  for (Eigen::Index t = 1; t < T; ++t) {
    for (int j = 0; j < n; ++j) {
      int best = 0;
      double best_score = delta(t - 1, 0) + log_trans(0, j);
      for (int i = 1; i < n; ++i) {
        const double score = delta(t - 1, i) + log_trans(i, j);
        if (score > best_score) {  // strict: ties keep the lowest index
          best_score = score;
          best = i;
        }
      }
      delta(t, j) = best_score + loge(t, j);
      psi(t, j) = best;
    }
  }
  int last = 0;
  for (int i = 1; i < n; ++i) {
    if (delta(T - 1, i) > delta(T - 1, last)) last = i;
  }
  check_finite_loglik(delta(T - 1, last));
  std::vector<int> path(static_cast<size_t>(T));
  path[static_cast<size_t>(T - 1)] = last;
  for (Eigen::Index t = T - 2; t >= 0; --t) {
    path[static_cast<size_t>(t)] = psi(t + 1, path[static_cast<size_t>(t + 1)]);
  }
  return path;
}

namespace {

// The Gaussian statistics follow the exact EM decomposition: slots with at
// least one observed dim contribute the completed outer product plus the
// conditional covariance of the missing block; fully missing rows carry
// responsibility (they still weigh the log-determinant term) but no moment.
struct SeqStats {
  double loglik = 0.0;
  Vector gamma0;
  Matrix xi_sum;
  Vector gamma_tot;              // all slots
  Vector gamma_obs;              // slots with >= 1 observed continuous dim
  Matrix mean_num_all;           // I x Mc, fully missing rows at the state mean
  Matrix mean_num_obs;           // I x Mc
  std::vector<Matrix> scatter;   // per state: sum g (x x' + C), observed slots
  std::vector<Matrix> disc_counts;  // per channel: I x J
};

SeqStats e_step(const HhmmParams& params, const ObservationSequence& seq,
                MissingMode mode) {
  EmissionEvaluator ev(params, mode);
  const Eigen::Index T = seq.n_slots();
  const int n = params.n_states();
  const Eigen::Index mc = params.n_continuous();

  Matrix loge(T, n);
  for (Eigen::Index t = 0; t < T; ++t) {
    for (int i = 0; i < n; ++i) loge(t, i) = ev.state_loglik(seq, t, i);
  }
  auto [la, loglik] = forward_from_emissions(params, loge);
  check_finite_loglik(loglik);
  Matrix lb = backward_from_emissions(params, loge);
  Matrix log_trans = params.trans.array().log();

  SeqStats st;
  st.loglik = loglik;
  st.gamma0 = Vector::Zero(n);
  st.xi_sum = Matrix::Zero(n, n);
  st.gamma_tot = Vector::Zero(n);
  st.gamma_obs = Vector::Zero(n);
  st.mean_num_all = Matrix::Zero(n, mc);
  st.mean_num_obs = Matrix::Zero(n, mc);
  st.scatter.assign(static_cast<size_t>(n), Matrix::Zero(mc, mc));
  st.disc_counts.resize(params.disc_probs.size());
  for (size_t m = 0; m < params.disc_probs.size(); ++m) {
    st.disc_counts[m] = Matrix::Zero(n, params.disc_probs[m].cols());
  }

  for (Eigen::Index t = 0; t < T; ++t) {
    const std::uint64_t mask = mc > 0 ? ev.row_mask(seq, t) : 0;
    for (int i = 0; i < n; ++i) {
      const double g = std::exp(la(t, i) + lb(t, i) - loglik);
      if (t == 0) st.gamma0[i] = g;
      st.gamma_tot[i] += g;
      if (g > 0.0 && mc > 0) {
        Vector x = ev.completed_row(seq, t, i);
        st.mean_num_all.row(i) += g * x.transpose();
        if (mask != 0) {
          st.gamma_obs[i] += g;
          st.mean_num_obs.row(i) += g * x.transpose();
          auto& sc = st.scatter[static_cast<size_t>(i)];
          sc.noalias() += g * x * x.transpose();
          const Pattern& p = ev.pattern(i, mask);
          for (size_t a = 0; a < p.miss.size(); ++a) {
            for (size_t b = 0; b < p.miss.size(); ++b) {
              sc(p.miss[a], p.miss[b]) +=
                  g * p.cond_cov(static_cast<Eigen::Index>(a),
                                 static_cast<Eigen::Index>(b));
            }
          }
        }
      }
      if (g > 0.0) {
        for (Eigen::Index m = 0; m < seq.n_discrete(); ++m) {
          if (seq.disc_mask(t, m)) {
            st.disc_counts[static_cast<size_t>(m)](i, seq.discrete(t, m)) += g;
          } else if (mode == MissingMode::kMeanSubstitute) {
            st.disc_counts[static_cast<size_t>(m)](i, ev.ml_symbol(m, i)) += g;
          }
          // marginalized missing symbols carry no count
        }
      }
    }
  }
  for (Eigen::Index t = 0; t + 1 < T; ++t) {
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        st.xi_sum(i, j) += std::exp(la(t, i) + log_trans(i, j) + loge(t + 1, j) +
                                    lb(t + 1, j) - loglik);
      }
    }
  }
  return st;
}

}  // namespace

std::pair<HhmmParams, std::vector<double>> fit_baum_welch(
    const HhmmParams& init, const std::vector<ObservationSequence>& seqs,
    const FitConfig& config, int jobs) {
  validate_params(init);
  validate_fit_config(config);
  if (seqs.empty()) throw InvalidInputError("fit requires at least one sequence");
  for (const auto& seq : seqs) {
    validate_sequence(seq);
    check_compatible(init, seq);
    check_nonempty(seq);
  }

  HhmmParams params = init;
  const int n = params.n_states();
  const Eigen::Index mc = params.n_continuous();
  const auto n_seqs = static_cast<int>(seqs.size());
  std::vector<double> trace;
  trace.reserve(static_cast<size_t>(config.max_iters));

  for (int iter = 0; iter < config.max_iters; ++iter) {
    std::vector<SeqStats> stats(static_cast<size_t>(n_seqs));
    parallel_for(n_seqs, jobs, [&](int s) {
      stats[static_cast<size_t>(s)] =
          e_step(params, seqs[static_cast<size_t>(s)], config.missing_mode);
    });

    // Reduce in sequence order, independent of the thread count.
    double loglik = 0.0;
    Vector pi_acc = Vector::Zero(n);
    Matrix xi_acc = Matrix::Zero(n, n);
    Vector gamma_tot = Vector::Zero(n);
    Vector gamma_obs = Vector::Zero(n);
    Matrix mean_num_all = Matrix::Zero(n, mc);
    Matrix mean_num_obs = Matrix::Zero(n, mc);
    std::vector<Matrix> scatter(static_cast<size_t>(n), Matrix::Zero(mc, mc));
    std::vector<Matrix> disc_counts(params.disc_probs.size());
    for (size_t m = 0; m < params.disc_probs.size(); ++m) {
      disc_counts[m] = Matrix::Zero(n, params.disc_probs[m].cols());
    }
    for (const auto& st : stats) {
      loglik += st.loglik;
      pi_acc += st.gamma0;
      xi_acc += st.xi_sum;
      gamma_tot += st.gamma_tot;
      gamma_obs += st.gamma_obs;
      mean_num_all += st.mean_num_all;
      mean_num_obs += st.mean_num_obs;
      for (int i = 0; i < n; ++i) scatter[static_cast<size_t>(i)] += st.scatter[static_cast<size_t>(i)];
      for (size_t m = 0; m < disc_counts.size(); ++m) disc_counts[m] += st.disc_counts[m];
    }

    trace.push_back(loglik);
    if (iter > 0) {
      const double prev = trace[trace.size() - 2];
      const double rel = (loglik - prev) / std::max(std::abs(prev), 1e-300);
      if (rel < config.rel_tol) break;
    }

    for (int i = 0; i < n; ++i) {
      if (gamma_tot[i] < 1e-12) throw DegenerateStateError(i);
    }

    // M-step
    params.pi = pi_acc / static_cast<double>(n_seqs);
    for (int i = 0; i < n; ++i) {
      const double row_sum = xi_acc.row(i).sum();
      if (row_sum > 0.0) {
        params.trans.row(i) = xi_acc.row(i) / row_sum;
      }
    }
    if (mc > 0) {
      for (int i = 0; i < n; ++i) {
        if (gamma_obs[i] < 1e-12) continue;  // no continuous evidence at all
        Vector mu = mean_num_all.row(i).transpose() / gamma_tot[i];
        // Under mean substitution the fully missing rows keep weighing the
        // log-determinant, so they stay in the denominator; under
        // marginalization they drop out entirely.
        const double denom = config.missing_mode == MissingMode::kMeanSubstitute
                                 ? gamma_tot[i]
                                 : gamma_obs[i];
        Vector num_obs = mean_num_obs.row(i).transpose();
        Matrix cov = scatter[static_cast<size_t>(i)] - mu * num_obs.transpose() -
                     num_obs * mu.transpose() +
                     gamma_obs[i] * mu * mu.transpose();
        cov /= denom;
        cov = 0.5 * (cov + cov.transpose());
        cov.diagonal().array() += config.cov_floor;
        params.means.row(i) = mu.transpose();
        params.covariances[static_cast<size_t>(i)] = std::move(cov);
      }
    }
    for (size_t m = 0; m < params.disc_probs.size(); ++m) {
      auto& d = params.disc_probs[m];
      const auto& frozen = params.frozen[m];
      const Eigen::Index n_sym = d.cols();
      for (int i = 0; i < n; ++i) {
        double frozen_mass = 0.0;
        double free_count = 0.0;
        bool any_free = false;
        for (Eigen::Index j = 0; j < n_sym; ++j) {
          if (frozen(i, j)) {
            frozen_mass += d(i, j);
          } else {
            any_free = true;
            free_count += disc_counts[m](i, j);
          }
        }
        if (!any_free || free_count <= 0.0) continue;
        const double free_mass = 1.0 - frozen_mass;
        for (Eigen::Index j = 0; j < n_sym; ++j) {
          if (!frozen(i, j)) {
            d(i, j) = free_mass * (disc_counts[m](i, j) / free_count);
          }
        }
      }
    }
  }
  return {std::move(params), std::move(trace)};
}

ObservationSequence impute(const HhmmParams& params, const ObservationSequence& seq,
                           const Matrix& gamma) {
  validate_params(params);
  validate_sequence(seq);
  check_compatible(params, seq);
  check_nonempty(seq);
  if (gamma.rows() != seq.n_slots() || gamma.cols() != params.n_states()) {
    throw InvalidInputError("gamma shape must be n_slots x n_states");
  }
  EmissionEvaluator ev(params, MissingMode::kMeanSubstitute);
  ObservationSequence out = seq;
  const int n = params.n_states();
  for (Eigen::Index t = 0; t < seq.n_slots(); ++t) {
    bool any_missing = false;
    for (Eigen::Index c = 0; c < seq.n_continuous(); ++c) {
      if (!seq.cont_mask(t, c)) any_missing = true;
    }
    if (any_missing) {
      Vector fill = Vector::Zero(seq.n_continuous());
      for (int i = 0; i < n; ++i) {
        if (gamma(t, i) == 0.0) continue;
        fill += gamma(t, i) * ev.completed_row(seq, t, i);
      }
      for (Eigen::Index c = 0; c < seq.n_continuous(); ++c) {
        if (!seq.cont_mask(t, c)) {
          out.continuous(t, c) = fill[c];
          out.cont_mask(t, c) = true;
        }
      }
    }
    for (Eigen::Index m = 0; m < seq.n_discrete(); ++m) {
      if (!seq.disc_mask(t, m)) {
        int best_state = 0;
        for (int i = 1; i < n; ++i) {
          if (gamma(t, i) > gamma(t, best_state)) best_state = i;
        }
        out.discrete(t, m) = ev.ml_symbol(m, best_state);
        out.disc_mask(t, m) = true;
      }
    }
  }
  return out;
}

std::pair<ObservationSequence, std::vector<int>> sample(const HhmmParams& params,
                                                        Eigen::Index n_slots,
                                                        std::uint64_t seed) {
  validate_params(params);
  if (n_slots < 1) throw InvalidInputError("sample length must be >= 1");
  const int n = params.n_states();
  const Eigen::Index mc = params.n_continuous();
  const Eigen::Index md = params.n_discrete();

  std::vector<Matrix> chol(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    if (mc == 0) continue;
    Eigen::LLT<Matrix> llt(params.covariances[static_cast<size_t>(i)]);
    if (llt.info() != Eigen::Success) {
      throw NumericalError("covariance for state " + std::to_string(i) +
                           " is not positive definite");
    }
    chol[static_cast<size_t>(i)] = llt.matrixL();
  }

  Rng rng(seed);
  ObservationSequence seq = make_sequence(n_slots, mc, md);
  seq.cont_mask.setConstant(true);
  seq.disc_mask.setConstant(true);
  std::vector<int> states(static_cast<size_t>(n_slots));
  for (Eigen::Index t = 0; t < n_slots; ++t) {
    const int s = t == 0 ? rng.categorical(params.pi)
                         : rng.categorical(params.trans.row(states[static_cast<size_t>(t - 1)]).transpose());
    states[static_cast<size_t>(t)] = s;
    if (mc > 0) {
      Vector z(mc);
      for (Eigen::Index c = 0; c < mc; ++c) z[c] = rng.normal();
      seq.continuous.row(t) =
          (params.means.row(s).transpose() + chol[static_cast<size_t>(s)] * z).transpose();
    }
    for (Eigen::Index m = 0; m < md; ++m) {
      seq.discrete(t, m) = rng.categorical(params.disc_probs[m].row(s).transpose());
    }
  }
  return {std::move(seq), std::move(states)};
}

int n_free_params(const HhmmParams& params) {
  const int n = params.n_states();
  const auto mc = static_cast<int>(params.n_continuous());
  int k = (n - 1) + n * (n - 1) + n * mc + n * mc * (mc + 1) / 2;
  for (size_t m = 0; m < params.disc_probs.size(); ++m) {
    const auto n_sym = static_cast<int>(params.disc_probs[m].cols());
    for (int i = 0; i < n; ++i) {
      int frozen_count = 0;
      for (int j = 0; j < n_sym; ++j) {
        if (params.frozen[m](i, j)) ++frozen_count;
      }
      k += std::max(0, n_sym - frozen_count - 1);
    }
  }
  return k;
}

HhmmParams initialize_params(int n_states, int n_frozen_states,
                             const std::vector<ObservationSequence>& seqs,
                             const FitConfig& config) {
  validate_fit_config(config);
  if (n_states < 1) throw InvalidInputError("need at least one state");
  if (n_frozen_states < 0 || n_frozen_states > n_states) {
    throw InvalidInputError("frozen state count out of range");
  }
  if (seqs.empty()) throw InvalidInputError("initialization requires sequences");
  const Eigen::Index mc = seqs.front().n_continuous();
  const Eigen::Index md = seqs.front().n_discrete();
  for (const auto& seq : seqs) {
    validate_sequence(seq);
    if (seq.n_continuous() != mc || seq.n_discrete() != md) {
      throw InvalidInputError("sequences must share one channel layout");
    }
  }

  Rng rng(mix_seed(config.seed, 0x1217));
  HhmmParams params;
  params.pi = Vector::Zero(n_states);
  for (int i = 0; i < n_states; ++i) params.pi[i] = 1.0 + 0.05 * rng.uniform();
  params.pi /= params.pi.sum();
  params.trans = Matrix::Zero(n_states, n_states);
  for (int i = 0; i < n_states; ++i) {
    for (int j = 0; j < n_states; ++j) params.trans(i, j) = 1.0 + 0.05 * rng.uniform();
    params.trans.row(i) /= params.trans.row(i).sum();
  }

  params.means = Matrix::Zero(n_states, mc);
  params.covariances.assign(static_cast<size_t>(n_states),
                            Matrix::Identity(mc, mc));
  if (mc > 0) {
    std::vector<Vector> rows;
    for (const auto& seq : seqs) {
      for (Eigen::Index t = 0; t < seq.n_slots(); ++t) {
        bool full = true;
        for (Eigen::Index c = 0; c < mc; ++c) {
          if (!seq.cont_mask(t, c)) full = false;
        }
        if (full) rows.push_back(seq.continuous.row(t).transpose());
      }
    }
    if (rows.size() >= static_cast<size_t>(n_states)) {
      Matrix data(static_cast<Eigen::Index>(rows.size()), mc);
      for (size_t r = 0; r < rows.size(); ++r) {
        data.row(static_cast<Eigen::Index>(r)) = rows[r].transpose();
      }
      KmeansResult km = kmeans_fit(data, n_states, mix_seed(config.seed, 0x3141), 1);
      // Low-activity centroids first so frozen (asleep) states start near
      // the quiet cluster.
      std::vector<int> order(static_cast<size_t>(n_states));
      for (int i = 0; i < n_states; ++i) order[static_cast<size_t>(i)] = i;
      std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return km.centroids(a, 0) < km.centroids(b, 0);
      });
      for (int i = 0; i < n_states; ++i) {
        params.means.row(i) = km.centroids.row(order[static_cast<size_t>(i)]);
      }
      Vector mean = data.colwise().mean().transpose();
      Matrix centered = data.rowwise() - mean.transpose();
      Matrix pooled = centered.transpose() * centered /
                      static_cast<double>(data.rows());
      pooled.diagonal().array() += config.cov_floor;
      params.covariances.assign(static_cast<size_t>(n_states), pooled);
    } else if (!rows.empty()) {
      for (int i = 0; i < n_states; ++i) {
        params.means.row(i) = rows[rows.size() > static_cast<size_t>(i)
                                       ? static_cast<size_t>(i)
                                       : rows.size() - 1]
                                  .transpose();
      }
    }
  }

  params.disc_probs.resize(static_cast<size_t>(md));
  params.frozen.resize(static_cast<size_t>(md));
  for (Eigen::Index m = 0; m < md; ++m) {
    Eigen::Index n_sym = 2;
    for (const auto& seq : seqs) {
      for (Eigen::Index t = 0; t < seq.n_slots(); ++t) {
        if (seq.disc_mask(t, m)) {
          n_sym = std::max(n_sym, static_cast<Eigen::Index>(seq.discrete(t, m)) + 1);
        }
      }
    }
    Matrix d(n_states, n_sym);
    BoolMatrix fr = BoolMatrix::Constant(n_states, n_sym, false);
    for (int i = 0; i < n_states; ++i) {
      if (i < n_frozen_states && n_sym >= 2) {
        // Pin p(symbol 1 | state) = 0; remaining mass over the other symbols.
        fr(i, 1) = true;
        d(i, 1) = 0.0;
        double total = 0.0;
        for (Eigen::Index j = 0; j < n_sym; ++j) {
          if (j == 1) continue;
          d(i, j) = 1.0 + 0.05 * rng.uniform();
          total += d(i, j);
        }
        for (Eigen::Index j = 0; j < n_sym; ++j) {
          if (j != 1) d(i, j) /= total;
        }
      } else {
        for (Eigen::Index j = 0; j < n_sym; ++j) d(i, j) = 1.0 + 0.05 * rng.uniform();
        d.row(i) /= d.row(i).sum();
      }
    }
    params.disc_probs[static_cast<size_t>(m)] = std::move(d);
    params.frozen[static_cast<size_t>(m)] = std::move(fr);
  }
  validate_params(params);
  return params;
}

}  // namespace sar
