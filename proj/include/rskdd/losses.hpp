#pragma once

#include <vector>

#include "rskdd/settings.hpp"
#include "rskdd/spatial.hpp"

namespace rskdd {

/// Keypoints, saliencies and descriptors of a source/target pair plus the
/// ground-truth transform taking source coordinates to target coordinates.
struct PairBatch {
  RowMatrix src_keypoints;   // M x 3
  RowMatrix tgt_keypoints;   // M x 3
  Eigen::VectorXd src_sigmas;
  Eigen::VectorXd tgt_sigmas;
  RowMatrix src_descriptors;  // M x d
  RowMatrix tgt_descriptors;  // M x d
  RigidTransform gt;

  void validate(bool need_descriptors) const;
};

/// Gradients with the same layout as PairBatch (transform excluded).
struct PairBatchGrad {
  RowMatrix src_keypoints;
  RowMatrix tgt_keypoints;
  Eigen::VectorXd src_sigmas;
  Eigen::VectorXd tgt_sigmas;
  RowMatrix src_descriptors;
  RowMatrix tgt_descriptors;

  static PairBatchGrad zeros_like(const PairBatch& batch);
};

/// Clamp applied to squared descriptor distances before the reciprocal.
inline constexpr double kDistanceClamp = 1e-12;

struct SoftAssignment {
  RowMatrix sq_distances;  // d_ij = |q_i - q_j|^2
  RowMatrix scores;        // s_ij = softmax_j((1 / d_ij) / t)
  RowMatrix soft_points;   // x_hat_i = sum_j s_ij x_j
};

SoftAssignment soft_assign(const RowMatrix& query_descriptors, const RowMatrix& target_descriptors,
                           const RowMatrix& target_keypoints, double temperature);

struct SoftAssignmentGrad {
  RowMatrix query_descriptors;
  RowMatrix target_descriptors;
  RowMatrix target_keypoints;
};

SoftAssignmentGrad soft_assign_backward(const RowMatrix& query_descriptors,
                                        const RowMatrix& target_descriptors,
                                        const RowMatrix& target_keypoints, double temperature,
                                        const SoftAssignment& forward,
                                        const RowMatrix& grad_soft_points);

/// w_i = max(sigma_max - sigma_i, 0), normalized so the weights sum to M.
/// Falls back to all ones when every w_i is zero and sets *fallback.
Eigen::VectorXd keypoint_weights(const Eigen::VectorXd& sigmas, double sigma_max,
                                 bool* fallback = nullptr);
Eigen::VectorXd keypoint_weights_backward(const Eigen::VectorXd& sigmas, double sigma_max,
                                          const Eigen::VectorXd& grad_weights);

/// Weighted squared residuals between ground-truth-transformed keypoints and
/// their soft-assigned counterparts, in both directions.
double matching_loss(const PairBatch& batch, const MatchingConfig& config,
                     PairBatchGrad* grad = nullptr);

/// Per direction: mean over keypoints of ln(s) + d / s where d is the distance
/// to the nearest keypoint of the other view (after ground-truth alignment)
/// and s the mean of the two saliencies. Both directions are summed.
double probabilistic_chamfer_loss(const PairBatch& batch, PairBatchGrad* grad = nullptr);

/// Mean squared distance from each keypoint to its nearest cloud point.
double point_to_point_loss(const RowMatrix& keypoints, const KdTree& cloud,
                           RowMatrix* grad = nullptr);

RowMatrix to_matrix(std::span<const Vec3> points);

}  // namespace rskdd
