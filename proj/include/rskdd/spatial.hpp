#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "rskdd/pc_core.hpp"

namespace rskdd {

struct Neighbor {
  std::size_t index;
  double distance_sq;
};

/// Exact kNN over a fixed point set. Immutable after construction and safe to
/// query from several threads.
class KdTree {
 public:
  /// Throws ConfigError on an empty point set.
  explicit KdTree(std::vector<Vec3> points);
  explicit KdTree(const PointCloud& cloud) : KdTree(cloud.positions()) {}

  /// min(k, N) neighbors ordered by (distance, index).
  std::vector<Neighbor> knn(const Vec3& query, std::size_t k) const;
  Neighbor nearest(const Vec3& query) const;

  std::size_t size() const { return points_.size(); }
  const std::vector<Vec3>& points() const { return points_; }

 private:
  struct Node {
    std::uint32_t begin;
    std::uint32_t end;
    std::int32_t left = -1;
    std::int32_t right = -1;
    int axis = -1;
    double split = 0.0;
  };

  int build(std::uint32_t begin, std::uint32_t end);
  template <class Heap>
  void search(int node, const Vec3& query, std::size_t k, Heap& heap) const;

  std::vector<Vec3> points_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

using SpatialIndex = KdTree;

/// Deterministic per-item seed derived from a global seed (splitmix64 mix).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t item);

/// M distinct indices drawn uniformly without replacement from [0, N).
std::vector<std::size_t> random_sample_candidates(std::size_t n, std::size_t m,
                                                  std::uint64_t seed);
inline std::vector<std::size_t> random_sample_candidates(const PointCloud& cloud,
                                                         std::size_t m,
                                                         std::uint64_t seed) {
  return random_sample_candidates(cloud.size(), m, seed);
}

enum class DilationMode {
  kRandom,  ///< K uniform draws without replacement from the alpha_d*K pool
  kStride,  ///< every alpha_d-th neighbor of the pool (dilated point convolution)
};

/// A center plus K neighbors. Feature rows are
/// [dx, dy, dz, |d|, channels...] relative to the center.
struct Cluster {
  std::size_t center_index = 0;
  Vec3 center = Vec3::Zero();
  std::vector<std::size_t> neighbor_indices;
  RowMatrix neighbor_positions;  // K x 3, absolute
  RowMatrix features;            // K x (4 + C)
  double pool_radius = 0.0;      // distance to the farthest pool member
  bool pool_truncated = false;

  std::size_t size() const { return neighbor_indices.size(); }
};

struct ClusterParams {
  std::size_t k = 128;
  std::size_t alpha_d = 2;
  DilationMode mode = DilationMode::kRandom;
};

/// Builds a random dilation cluster around cloud[center]. When the cloud holds
/// fewer than alpha_d*K points the pool is the whole cloud and the cluster is
/// flagged; if the pool is smaller than K, rows are padded by resampling.
Cluster random_dilation_cluster(const KdTree& index, const PointCloud& cloud,
                                std::size_t center, const ClusterParams& params,
                                std::uint64_t seed);

/// Feature rows for explicit neighbor indices (used by tests and by
/// random_dilation_cluster).
RowMatrix cluster_features(const PointCloud& cloud, const Vec3& center,
                           std::span<const std::size_t> neighbors);

}  // namespace rskdd
