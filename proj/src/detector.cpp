#include "rskdd/detector.hpp"

#include <algorithm>
#include <numeric>

#include "rskdd/errors.hpp"

namespace rskdd {
namespace {

// Weighted keypoint and sigma given per-neighbor scores.
void aggregate(const Cluster& cluster, const RowMatrix& features_hat, const Eigen::VectorXd& scores,
               ClusterKeypoint& out) {
  out.weights = nn::softmax(scores);
  out.keypoint = (cluster.neighbor_positions.transpose() * out.weights);
  out.attentive_map = out.weights.asDiagonal() * features_hat;
  out.global = out.attentive_map.colwise().sum();
}

}  // namespace

ClusterKeypoint aggregate_with_scores(const Cluster& cluster, const RowMatrix& features_hat,
                                      const Eigen::VectorXd& scores) {
  if (scores.size() != static_cast<Eigen::Index>(cluster.size()) ||
      features_hat.rows() != scores.size()) {
    throw ConfigError("aggregate_with_scores: score count does not match cluster size");
  }
  ClusterKeypoint out;
  aggregate(cluster, features_hat, scores, out);
  return out;
}

ClusterKeypoint detect_cluster(const Model& model, const Cluster& cluster, DetectorTape* tape) {
  if (cluster.features.cols() != model.config.cluster_width()) {
    throw ConfigError("detect: cluster feature width " + std::to_string(cluster.features.cols()) +
                      " does not match model width " +
                      std::to_string(model.config.cluster_width()) + " (channels missing?)");
  }
  DetectorTape local;
  DetectorTape& t = tape != nullptr ? *tape : local;

  t.features_hat = nn::forward(model.detector, cluster.features, &t.detector);
  Eigen::VectorXd scores;
  if (model.config.attention_head == AttentionHead::kChannelMax) {
    scores = nn::row_max(t.features_hat, &t.score_argmax);
  } else {
    scores = nn::forward(model.attention, t.features_hat, &t.attention).col(0);
  }

  ClusterKeypoint out;
  aggregate(cluster, t.features_hat, scores, out);
  const RowMatrix pre = nn::forward(model.saliency, out.global, &t.saliency);
  t.saliency_pre = pre(0, 0);
  out.sigma = nn::softplus(t.saliency_pre);
  return out;
}

void detect_cluster_backward(const Model& model, const Cluster& cluster, const DetectorTape& tape,
                             const ClusterKeypoint& out, const ClusterKeypointGrad& grad,
                             Model& grads) {
  const Eigen::Index k = static_cast<Eigen::Index>(cluster.size());

  // sigma = softplus(saliency(global))
  RowMatrix g_pre(1, 1);
  g_pre(0, 0) = grad.sigma * nn::softplus_grad(tape.saliency_pre);
  const RowMatrix g_global = nn::backward(model.saliency, tape.saliency, g_pre, grads.saliency);

  // global = column sum of the attentive map
  RowMatrix g_map = g_global.replicate(k, 1);
  if (grad.attentive_map.size() > 0) g_map += grad.attentive_map;

  // attentive_map = diag(w) * F_hat, keypoint = X^T w
  Eigen::VectorXd g_w = (g_map.cwiseProduct(tape.features_hat)).rowwise().sum();
  g_w += cluster.neighbor_positions * grad.keypoint;
  RowMatrix g_fhat = out.weights.asDiagonal() * g_map;

  const Eigen::VectorXd g_scores = nn::softmax_backward(out.weights, g_w);
  if (model.config.attention_head == AttentionHead::kChannelMax) {
    for (Eigen::Index r = 0; r < k; ++r) {
      g_fhat(r, tape.score_argmax[static_cast<std::size_t>(r)]) += g_scores(r);
    }
  } else {
    RowMatrix g_head = g_scores;
    g_fhat += nn::backward(model.attention, tape.attention, g_head, grads.attention);
  }
  nn::backward(model.detector, tape.detector, g_fhat, grads.detector);
}

void KeypointSet::push_back(const Cluster& cluster, ClusterKeypoint kp, std::size_t source) {
  keypoints.push_back(kp.keypoint);
  sigmas.push_back(kp.sigma);
  weights.push_back(std::move(kp.weights));
  attentive_maps.push_back(std::move(kp.attentive_map));
  global_features.push_back(std::move(kp.global));
  clusters.push_back(cluster);
  cluster_index.push_back(source);
}

KeypointSet KeypointSet::select(std::span<const std::size_t> rows) const {
  KeypointSet out;
  for (std::size_t r : rows) {
    out.keypoints.push_back(keypoints.at(r));
    out.sigmas.push_back(sigmas[r]);
    out.weights.push_back(weights[r]);
    out.attentive_maps.push_back(attentive_maps[r]);
    out.global_features.push_back(global_features[r]);
    out.clusters.push_back(clusters[r]);
    out.cluster_index.push_back(cluster_index[r]);
  }
  return out;
}

std::vector<Cluster> build_clusters(const PointCloud& cloud, const KdTree& index,
                                    const DetectConfig& config) {
  const auto centers = random_sample_candidates(cloud, config.m, config.seed);
  std::vector<Cluster> clusters(centers.size());
  const auto n = static_cast<std::int64_t>(centers.size());
#if defined(RSKDD_HAVE_OPENMP)
#pragma omp parallel for schedule(static)
#endif
  for (std::int64_t i = 0; i < n; ++i) {
    const std::size_t c = centers[static_cast<std::size_t>(i)];
    clusters[static_cast<std::size_t>(i)] =
        random_dilation_cluster(index, cloud, c, config.cluster, derive_seed(config.seed, c));
  }
  return clusters;
}

KeypointSet detect_clusters(const Model& model, std::vector<Cluster> clusters) {
  std::vector<ClusterKeypoint> outs(clusters.size());
  const auto n = static_cast<std::int64_t>(clusters.size());
#if defined(RSKDD_HAVE_OPENMP)
#pragma omp parallel for schedule(static)
#endif
  for (std::int64_t i = 0; i < n; ++i) {
    outs[static_cast<std::size_t>(i)] = detect_cluster(model, clusters[static_cast<std::size_t>(i)]);
  }
  KeypointSet set;
  for (std::size_t i = 0; i < clusters.size(); ++i) set.push_back(clusters[i], std::move(outs[i]), i);
  return set;
}

KeypointSet detect(const PointCloud& cloud, const Model& model, const DetectConfig& config) {
  if (cloud.channel_width() != model.config.channels) {
    throw ConfigError("detect: cloud has " + std::to_string(cloud.channel_width()) +
                      " channels, model expects " + std::to_string(model.config.channels));
  }
  const KdTree index(cloud);
  return detect_clusters(model, build_clusters(cloud, index, config));
}

std::vector<std::size_t> lowest_sigma_order(const KeypointSet& set, std::size_t m_out) {
  if (m_out > set.size()) throw ConfigError("select_keypoints: M_out exceeds keypoint count");
  std::vector<std::size_t> order(set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (set.sigmas[a] != set.sigmas[b]) return set.sigmas[a] < set.sigmas[b];
    return set.cluster_index[a] < set.cluster_index[b];
  });
  order.resize(m_out);
  return order;
}

KeypointSet select_keypoints(const KeypointSet& set, std::size_t m_out) {
  return set.select(lowest_sigma_order(set, m_out));
}

}  // namespace rskdd
