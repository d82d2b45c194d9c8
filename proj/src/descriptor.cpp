#include "rskdd/descriptor.hpp"

#include "rskdd/errors.hpp"

namespace rskdd {

DescriptorSet DescriptorSet::select(std::span<const std::size_t> rows) const {
  DescriptorSet out;
  out.values.resize(static_cast<Eigen::Index>(rows.size()), values.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.values.row(static_cast<Eigen::Index>(i)) = values.row(static_cast<Eigen::Index>(rows[i]));
  }
  return out;
}

Eigen::RowVectorXd describe_cluster(const Model& model, const RowMatrix& features,
                                    const RowMatrix& attentive_map, DescriptorTape* tape) {
  const ModelConfig& cfg = model.config;
  const Eigen::Index k = features.rows();
  if (attentive_map.rows() != k || attentive_map.cols() != cfg.attentive_width()) {
    throw ConfigError("describe: attentive map shape does not match cluster");
  }
  DescriptorTape local;
  DescriptorTape& t = tape != nullptr ? *tape : local;

  const RowMatrix point = nn::forward(model.point_features, features, &t.point);
  const Eigen::RowVectorXd global = nn::col_max(point, &t.global_argmax);

  const Eigen::Index cf = point.cols();
  RowMatrix fused(k, 2 * cf + cfg.attentive_width());
  fused.leftCols(cf) = point;
  fused.middleCols(cf, cf) = global.replicate(k, 1);
  if (cfg.use_attentive_map) {
    fused.rightCols(cfg.attentive_width()) = attentive_map;
  } else {
    fused.rightCols(cfg.attentive_width()).setZero();
  }

  const RowMatrix h = nn::forward(model.fuse, fused, &t.fuse);
  t.raw = nn::col_max(h, &t.out_argmax);
  if (cfg.l2_normalize) {
    const double norm = t.raw.norm();
    return norm > 0.0 ? Eigen::RowVectorXd(t.raw / norm) : t.raw;
  }
  return t.raw;
}

RowMatrix describe_cluster_backward(const Model& model, const DescriptorTape& tape,
                                    const Eigen::RowVectorXd& descriptor,
                                    const Eigen::RowVectorXd& grad, Model& grads) {
  const ModelConfig& cfg = model.config;
  Eigen::RowVectorXd g_raw = grad;
  if (cfg.l2_normalize) {
    const double norm = tape.raw.norm();
    if (norm > 0.0) g_raw = (grad - descriptor * descriptor.dot(grad)) / norm;
  }

  const Eigen::Index k = tape.fuse.inputs.front().rows();
  RowMatrix g_h = RowMatrix::Zero(k, g_raw.size());
  for (Eigen::Index c = 0; c < g_raw.size(); ++c) {
    g_h(tape.out_argmax[static_cast<std::size_t>(c)], c) = g_raw(c);
  }
  const RowMatrix g_fused = nn::backward(model.fuse, tape.fuse, g_h, grads.fuse);

  const Eigen::Index cf = cfg.global_width();
  RowMatrix g_point = g_fused.leftCols(cf);
  const Eigen::RowVectorXd g_global = g_fused.middleCols(cf, cf).colwise().sum();
  for (Eigen::Index c = 0; c < cf; ++c) {
    g_point(tape.global_argmax[static_cast<std::size_t>(c)], c) += g_global(c);
  }
  nn::backward(model.point_features, tape.point, g_point, grads.point_features);

  if (!cfg.use_attentive_map) return RowMatrix::Zero(k, cfg.attentive_width());
  return g_fused.rightCols(cfg.attentive_width());
}

DescriptorSet describe(std::span<const Cluster> clusters, std::span<const RowMatrix> maps,
                       const Model& model) {
  if (clusters.size() != maps.size()) {
    throw ConfigError("describe: clusters and attentive maps are not index-aligned");
  }
  DescriptorSet out;
  out.values.resize(static_cast<Eigen::Index>(clusters.size()), model.config.descriptor_width());
  const auto n = static_cast<std::int64_t>(clusters.size());
#if defined(RSKDD_HAVE_OPENMP)
#pragma omp parallel for schedule(static)
#endif
  for (std::int64_t i = 0; i < n; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    out.values.row(i) = describe_cluster(model, clusters[idx].features, maps[idx]);
  }
  return out;
}

}  // namespace rskdd
