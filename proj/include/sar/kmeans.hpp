#ifndef SAR_KMEANS_HPP
#define SAR_KMEANS_HPP

#include "sar/common.hpp"

#include <cstdint>
#include <vector>

namespace sar {

struct KmeansResult {
  Matrix centroids;             // k x dims
  std::vector<int> assignments; // one per input row
  double inertia = 0.0;
};

// Lloyd's algorithm with k-means++ seeding. Deterministic given the seed;
// with n_restarts > 1 the lowest-inertia run wins (ties keep the earliest
// restart). Empty clusters are reseeded to the point farthest from its
// centroid.
KmeansResult kmeans_fit(const Matrix& data, int k, std::uint64_t seed,
                        int n_restarts = 1);

}  // namespace sar

#endif
