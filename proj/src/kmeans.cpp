#include "sar/kmeans.hpp"

#include <cmath>
#include <limits>

namespace sar {

namespace {

double sq_dist(const Matrix& data, Eigen::Index row, const Matrix& centroids,
               int c) {
  return (data.row(row) - centroids.row(c)).squaredNorm();
}

KmeansResult run_once(const Matrix& data, int k, Rng& rng) {
  const Eigen::Index n = data.rows();
  KmeansResult res;
  res.centroids.resize(k, data.cols());

  // k-means++ seeding
  Eigen::Index first = rng.uniform_int(0, static_cast<int>(n - 1));
  res.centroids.row(0) = data.row(first);
  Vector d2 = Vector::Constant(n, std::numeric_limits<double>::infinity());
  for (int c = 1; c < k; ++c) {
    double total = 0.0;
    for (Eigen::Index r = 0; r < n; ++r) {
      d2[r] = std::min(d2[r], sq_dist(data, r, res.centroids, c - 1));
      total += d2[r];
    }
    Eigen::Index pick = 0;
    if (total > 0.0) {
      double u = rng.uniform() * total;
      double acc = 0.0;
      for (Eigen::Index r = 0; r < n; ++r) {
        acc += d2[r];
        if (u < acc) {
          pick = r;
          break;
        }
        pick = r;
      }
    } else {
      pick = rng.uniform_int(0, static_cast<int>(n - 1));
    }
    res.centroids.row(c) = data.row(pick);
  }

  res.assignments.assign(static_cast<size_t>(n), 0);
  for (int iter = 0; iter < 100; ++iter) {
    bool changed = false;
    for (Eigen::Index r = 0; r < n; ++r) {
      int best = 0;
      double best_d = sq_dist(data, r, res.centroids, 0);
      for (int c = 1; c < k; ++c) {
        double d = sq_dist(data, r, res.centroids, c);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (res.assignments[static_cast<size_t>(r)] != best) {
        res.assignments[static_cast<size_t>(r)] = best;
        changed = true;
      }
    }
    Matrix sums = Matrix::Zero(k, data.cols());
    Vector counts = Vector::Zero(k);
    for (Eigen::Index r = 0; r < n; ++r) {
      sums.row(res.assignments[static_cast<size_t>(r)]) += data.row(r);
      counts[res.assignments[static_cast<size_t>(r)]] += 1.0;
    }
    for (int c = 0; c < k; ++c) {
      if (counts[c] > 0.0) {
        res.centroids.row(c) = sums.row(c) / counts[c];
      } else {
        // reseed to the point farthest from its own centroid
        Eigen::Index far = 0;
        double far_d = -1.0;
        for (Eigen::Index r = 0; r < n; ++r) {
          double d = sq_dist(data, r, res.centroids,
                             res.assignments[static_cast<size_t>(r)]);
          if (d > far_d) {
            far_d = d;
            far = r;
          }
        }
        res.centroids.row(c) = data.row(far);
        changed = true;
      }
    }
    if (!changed && iter > 0) break;
  }

  res.inertia = 0.0;
  for (Eigen::Index r = 0; r < n; ++r) {
    res.inertia += sq_dist(data, r, res.centroids,
                           res.assignments[static_cast<size_t>(r)]);
  }
  return res;
}

}  // namespace

KmeansResult kmeans_fit(const Matrix& data, int k, std::uint64_t seed,
                        int n_restarts) {
  if (k < 1) throw InvalidInputError("k must be >= 1");
  if (data.rows() < k) {
    throw InvalidInputError("k-means needs at least k rows");
  }
  if (n_restarts < 1) n_restarts = 1;
  KmeansResult best;
  bool have = false;
  for (int r = 0; r < n_restarts; ++r) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(r) + 77));
    KmeansResult cur = run_once(data, k, rng);
    if (!have || cur.inertia < best.inertia) {
      best = std::move(cur);
      have = true;
    }
  }
  return best;
}

}  // namespace sar
