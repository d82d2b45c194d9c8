#pragma once

#include <vector>

#include "rskdd/detector.hpp"

namespace rskdd {

/// M descriptors of width d, row i belonging to keypoint i.
struct DescriptorSet {
  RowMatrix values;  // M x d

  std::size_t size() const { return static_cast<std::size_t>(values.rows()); }
  int dim() const { return static_cast<int>(values.cols()); }
  DescriptorSet select(std::span<const std::size_t> rows) const;
};

struct DescriptorTape {
  nn::MlpTape point;
  nn::MlpTape fuse;
  std::vector<Eigen::Index> global_argmax;  // per C_f column
  std::vector<Eigen::Index> out_argmax;     // per d column
  Eigen::RowVectorXd raw;                   // pre-normalization descriptor
};

/// Per-point MLP, max-pooled global feature, concatenation
/// [point | global | attentive row], second MLP and max-pool.
Eigen::RowVectorXd describe_cluster(const Model& model, const RowMatrix& features,
                                    const RowMatrix& attentive_map,
                                    DescriptorTape* tape = nullptr);

/// Returns d(loss)/d(attentive_map) and accumulates parameter gradients.
RowMatrix describe_cluster_backward(const Model& model, const DescriptorTape& tape,
                                    const Eigen::RowVectorXd& descriptor,
                                    const Eigen::RowVectorXd& grad, Model& grads);

/// Throws ConfigError unless clusters and maps are index-aligned.
DescriptorSet describe(std::span<const Cluster> clusters, std::span<const RowMatrix> maps,
                       const Model& model);
inline DescriptorSet describe(const KeypointSet& set, const Model& model) {
  return describe(set.clusters, set.attentive_maps, model);
}

}  // namespace rskdd
