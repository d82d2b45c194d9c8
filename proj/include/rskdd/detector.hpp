#pragma once

#include <cstdint>
#include <vector>

#include "rskdd/model.hpp"
#include "rskdd/settings.hpp"
#include "rskdd/spatial.hpp"

namespace rskdd {

/// Forward result for one cluster.
struct ClusterKeypoint {
  Vec3 keypoint = Vec3::Zero();     // sum_k w_k x_k
  double sigma = 0.0;               // softplus(saliency(f_tilde))
  Eigen::VectorXd weights;          // K, on the simplex
  RowMatrix attentive_map;          // K x C_a, rows scaled by weights
  Eigen::RowVectorXd global;        // C_a, column sum of attentive_map
};

/// Intermediate values kept for the backward pass of one cluster.
struct DetectorTape {
  nn::MlpTape detector;
  nn::MlpTape attention;
  nn::MlpTape saliency;
  RowMatrix features_hat;            // K x C_a
  std::vector<Eigen::Index> score_argmax;
  double saliency_pre = 0.0;
};

/// Upstream gradients arriving at one cluster's outputs.
struct ClusterKeypointGrad {
  Vec3 keypoint = Vec3::Zero();
  double sigma = 0.0;
  RowMatrix attentive_map;  // empty means zero
};

ClusterKeypoint detect_cluster(const Model& model, const Cluster& cluster,
                               DetectorTape* tape = nullptr);

/// Overrides the learned attention scores; used to probe the weighted aggregation.
ClusterKeypoint aggregate_with_scores(const Cluster& cluster, const RowMatrix& features_hat,
                                      const Eigen::VectorXd& scores);

void detect_cluster_backward(const Model& model, const Cluster& cluster, const DetectorTape& tape,
                             const ClusterKeypoint& out, const ClusterKeypointGrad& grad,
                             Model& grads);

/// M keypoints with saliencies, attention weights, attentive feature maps and
/// the clusters they came from. Entry i always refers to clusters[i].
struct KeypointSet {
  std::vector<Vec3> keypoints;
  std::vector<double> sigmas;
  std::vector<Eigen::VectorXd> weights;
  std::vector<RowMatrix> attentive_maps;
  std::vector<Eigen::RowVectorXd> global_features;
  std::vector<Cluster> clusters;
  std::vector<std::size_t> cluster_index;  // back-reference into the detect() output

  std::size_t size() const { return keypoints.size(); }
  void push_back(const Cluster& cluster, ClusterKeypoint kp, std::size_t source);
  KeypointSet select(std::span<const std::size_t> rows) const;
};

/// Samples M centers and builds one random dilation cluster around each.
std::vector<Cluster> build_clusters(const PointCloud& cloud, const KdTree& index,
                                    const DetectConfig& config);

/// Runs the detector over prepared clusters.
KeypointSet detect_clusters(const Model& model, std::vector<Cluster> clusters);

/// Full detection. The cloud needs C = model.config.channels channels.
KeypointSet detect(const PointCloud& cloud, const Model& model, const DetectConfig& config);

/// Rows of the m_out lowest-sigma entries, ordered by (sigma, cluster index).
std::vector<std::size_t> lowest_sigma_order(const KeypointSet& set, std::size_t m_out);
KeypointSet select_keypoints(const KeypointSet& set, std::size_t m_out);

}  // namespace rskdd
