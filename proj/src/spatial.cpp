#include "rskdd/spatial.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <numeric>
#include <queue>
#include <random>

#include "rskdd/errors.hpp"

namespace rskdd {
namespace {

constexpr std::uint32_t kLeafSize = 12;

bool closer(const Neighbor& a, const Neighbor& b) {
  return a.distance_sq < b.distance_sq ||
         (a.distance_sq == b.distance_sq && a.index < b.index);
}

struct CloserCmp {
  bool operator()(const Neighbor& a, const Neighbor& b) const { return closer(a, b); }
};

// Max-heap on (distance, index): top() is the current worst candidate.
using NeighborHeap = std::priority_queue<Neighbor, std::vector<Neighbor>, CloserCmp>;

}  // namespace

KdTree::KdTree(std::vector<Vec3> points) : points_(std::move(points)) {
  if (points_.empty()) throw ConfigError("KdTree: cannot index an empty point set");
  order_.resize(points_.size());
  std::iota(order_.begin(), order_.end(), 0u);
  nodes_.reserve(2 * points_.size() / kLeafSize + 1);
  root_ = build(0, static_cast<std::uint32_t>(points_.size()));
}

int KdTree::build(std::uint32_t begin, std::uint32_t end) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back(Node{begin, end});
  if (end - begin <= kLeafSize) return id;

  Vec3 lo = points_[order_[begin]];
  Vec3 hi = lo;
  for (std::uint32_t i = begin; i < end; ++i) {
    lo = lo.cwiseMin(points_[order_[i]]);
    hi = hi.cwiseMax(points_[order_[i]]);
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  if (hi(axis) == lo(axis)) return id;  // all coincident

  const std::uint32_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](std::uint32_t a, std::uint32_t b) {
                     return points_[a](axis) < points_[b](axis);
                   });
  const double split = points_[order_[mid]](axis);
  const int left = build(begin, mid);
  const int right = build(mid, end);
  nodes_[id].axis = axis;
  nodes_[id].split = split;
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

template <class Heap>
void KdTree::search(int node_id, const Vec3& query, std::size_t k, Heap& heap) const {
  const Node& node = nodes_[node_id];
  if (node.axis < 0) {
    for (std::uint32_t i = node.begin; i < node.end; ++i) {
      const Neighbor cand{order_[i], (points_[order_[i]] - query).squaredNorm()};
      if (heap.size() < k) {
        heap.push(cand);
      } else if (closer(cand, heap.top())) {
        heap.pop();
        heap.push(cand);
      }
    }
    return;
  }
  // Left holds values <= split, right holds values >= split.
  const double diff = query(node.axis) - node.split;
  const int near = diff < 0.0 ? node.left : node.right;
  const int far = diff < 0.0 ? node.right : node.left;
  search(near, query, k, heap);
  if (heap.size() < k || diff * diff <= heap.top().distance_sq) search(far, query, k, heap);
}

std::vector<Neighbor> KdTree::knn(const Vec3& query, std::size_t k) const {
  k = std::min(k, points_.size());
  std::vector<Neighbor> out;
  if (k == 0) return out;
  std::vector<Neighbor> storage;
  storage.reserve(k + 1);
  NeighborHeap heap(CloserCmp{}, std::move(storage));
  search(root_, query, k, heap);
  out.resize(heap.size());
  for (std::size_t i = out.size(); i-- > 0;) {
    out[i] = heap.top();
    heap.pop();
  }
  return out;
}

Neighbor KdTree::nearest(const Vec3& query) const { return knn(query, 1).front(); }

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t item) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (item + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

namespace {

// Partial Fisher-Yates: first m entries of a uniformly shuffled [0, n).
std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t m,
                                                    std::mt19937_64& rng) {
  std::vector<std::size_t> pool(n);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  for (std::size_t i = 0; i < m; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(m);
  return pool;
}

}  // namespace

std::vector<std::size_t> random_sample_candidates(std::size_t n, std::size_t m,
                                                  std::uint64_t seed) {
  if (m > n) throw ConfigError("random_sample_candidates: M exceeds point count");
  std::mt19937_64 rng(seed);
  return sample_without_replacement(n, m, rng);
}

RowMatrix cluster_features(const PointCloud& cloud, const Vec3& center,
                           std::span<const std::size_t> neighbors) {
  const int c = cloud.channel_width();
  RowMatrix f(static_cast<Eigen::Index>(neighbors.size()), 4 + c);
  for (std::size_t r = 0; r < neighbors.size(); ++r) {
    const auto row = static_cast<Eigen::Index>(r);
    const Vec3 rel = cloud.position(neighbors[r]) - center;
    f.row(row).head<3>() = rel.transpose();
    f(row, 3) = rel.norm();
    if (c > 0) f.row(row).tail(c) = cloud.channels().row(static_cast<Eigen::Index>(neighbors[r]));
  }
  return f;
}

Cluster random_dilation_cluster(const KdTree& index, const PointCloud& cloud,
                                std::size_t center, const ClusterParams& params,
                                std::uint64_t seed) {
  if (params.k == 0) throw ConfigError("random_dilation_cluster: K must be >= 1");
  if (params.alpha_d == 0) throw ConfigError("random_dilation_cluster: alpha_d must be >= 1");
  if (center >= cloud.size()) throw ConfigError("random_dilation_cluster: center out of range");

  Cluster cl;
  cl.center_index = center;
  cl.center = cloud.position(center);

  const std::size_t want = params.alpha_d * params.k;
  const auto pool = index.knn(cl.center, want);
  cl.pool_truncated = pool.size() < want;
  if (cl.pool_truncated) {
    spdlog::debug("random_dilation_cluster: pool truncated to {} of {}", pool.size(), want);
  }
  cl.pool_radius = std::sqrt(pool.back().distance_sq);

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> picks;
  if (pool.size() <= params.k) {
    picks.resize(pool.size());
    std::iota(picks.begin(), picks.end(), std::size_t{0});
    std::uniform_int_distribution<std::size_t> pad(0, pool.size() - 1);
    while (picks.size() < params.k) picks.push_back(pad(rng));
  } else if (params.mode == DilationMode::kStride) {
    const std::size_t stride = pool.size() / params.k;
    for (std::size_t i = 0; i < params.k; ++i) picks.push_back(i * stride);
  } else {
    picks = sample_without_replacement(pool.size(), params.k, rng);
    std::sort(picks.begin(), picks.end());
  }

  cl.neighbor_indices.reserve(picks.size());
  for (std::size_t p : picks) cl.neighbor_indices.push_back(pool[p].index);
  cl.neighbor_positions.resize(static_cast<Eigen::Index>(picks.size()), 3);
  for (std::size_t r = 0; r < picks.size(); ++r) {
    cl.neighbor_positions.row(static_cast<Eigen::Index>(r)) =
        cloud.position(cl.neighbor_indices[r]).transpose();
  }
  cl.features = cluster_features(cloud, cl.center, cl.neighbor_indices);
  return cl;
}

}  // namespace rskdd
