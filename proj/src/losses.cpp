#include "rskdd/losses.hpp"

#include <spdlog/spdlog.h>

#include <cmath>

#include "rskdd/errors.hpp"

namespace rskdd {
namespace {

RowMatrix pairwise_sq_distances(const RowMatrix& a, const RowMatrix& b) {
  RowMatrix d(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < b.rows(); ++j) d(i, j) = (a.row(i) - b.row(j)).squaredNorm();
  }
  return d;
}

RowMatrix transform_rows(const RowMatrix& points, const RigidTransform& t) {
  RowMatrix out = points * t.rotation.transpose();
  out.rowwise() += t.translation.transpose();
  return out;
}

}  // namespace

RowMatrix to_matrix(std::span<const Vec3> points) {
  RowMatrix m(static_cast<Eigen::Index>(points.size()), 3);
  for (std::size_t i = 0; i < points.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = points[i].transpose();
  return m;
}

void MatchingConfig::validate() const {
  if (!(temperature > 0.0)) throw ConfigError("matching: temperature must be > 0");
  if (!(sigma_max > 0.0)) throw ConfigError("matching: sigma_max must be > 0");
}

void PairBatch::validate(bool need_descriptors) const {
  const Eigen::Index m = src_keypoints.rows();
  if (m == 0 || tgt_keypoints.rows() != m || src_sigmas.size() != m || tgt_sigmas.size() != m) {
    throw ConfigError("PairBatch: source and target must hold the same nonzero keypoint count");
  }
  if (need_descriptors &&
      (src_descriptors.rows() != m || tgt_descriptors.rows() != m ||
       src_descriptors.cols() != tgt_descriptors.cols())) {
    throw ConfigError("PairBatch: descriptor shapes do not match keypoints");
  }
  gt.validate();
}

PairBatchGrad PairBatchGrad::zeros_like(const PairBatch& b) {
  PairBatchGrad g;
  g.src_keypoints = RowMatrix::Zero(b.src_keypoints.rows(), 3);
  g.tgt_keypoints = RowMatrix::Zero(b.tgt_keypoints.rows(), 3);
  g.src_sigmas = Eigen::VectorXd::Zero(b.src_sigmas.size());
  g.tgt_sigmas = Eigen::VectorXd::Zero(b.tgt_sigmas.size());
  g.src_descriptors = RowMatrix::Zero(b.src_descriptors.rows(), b.src_descriptors.cols());
  g.tgt_descriptors = RowMatrix::Zero(b.tgt_descriptors.rows(), b.tgt_descriptors.cols());
  return g;
}

SoftAssignment soft_assign(const RowMatrix& query, const RowMatrix& target,
                           const RowMatrix& target_keypoints, double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("soft_assign: temperature must be > 0");
  if (query.cols() != target.cols() || target.rows() != target_keypoints.rows()) {
    throw ConfigError("soft_assign: shape mismatch");
  }
  SoftAssignment out;
  out.sq_distances = pairwise_sq_distances(query, target);
  if (!out.sq_distances.allFinite()) throw NumericalError("soft_assign: non-finite descriptor distance");
  out.scores.resize(query.rows(), target.rows());
  for (Eigen::Index i = 0; i < query.rows(); ++i) {
    const Eigen::VectorXd logits =
        (out.sq_distances.row(i).transpose().array().max(kDistanceClamp).inverse() / temperature)
            .matrix();
    out.scores.row(i) = nn::softmax(logits).transpose();
  }
  out.soft_points = out.scores * target_keypoints;
  return out;
}

SoftAssignmentGrad soft_assign_backward(const RowMatrix& query, const RowMatrix& target,
                                        const RowMatrix& target_keypoints, double temperature,
                                        const SoftAssignment& fwd, const RowMatrix& grad_soft) {
  SoftAssignmentGrad g;
  g.target_keypoints = fwd.scores.transpose() * grad_soft;
  g.query_descriptors = RowMatrix::Zero(query.rows(), query.cols());
  g.target_descriptors = RowMatrix::Zero(target.rows(), target.cols());

  const RowMatrix g_scores = grad_soft * target_keypoints.transpose();  // M x M'
  for (Eigen::Index i = 0; i < query.rows(); ++i) {
    const Eigen::VectorXd g_logits =
        nn::softmax_backward(fwd.scores.row(i).transpose(), g_scores.row(i).transpose());
    for (Eigen::Index j = 0; j < target.rows(); ++j) {
      const double d = fwd.sq_distances(i, j);
      if (d <= kDistanceClamp) continue;  // clamped: constant in d
      const double g_d = g_logits(j) * (-1.0 / (temperature * d * d));
      const Eigen::RowVectorXd diff = query.row(i) - target.row(j);
      g.query_descriptors.row(i) += 2.0 * g_d * diff;
      g.target_descriptors.row(j) -= 2.0 * g_d * diff;
    }
  }
  return g;
}

Eigen::VectorXd keypoint_weights(const Eigen::VectorXd& sigmas, double sigma_max, bool* fallback) {
  if (sigmas.size() == 0) throw ConfigError("keypoint_weights: empty saliency vector");
  const Eigen::VectorXd w = (sigma_max - sigmas.array()).max(0.0).matrix();
  const double total = w.sum();
  if (fallback != nullptr) *fallback = !(total > 0.0);
  if (!(total > 0.0)) {
    spdlog::debug("keypoint_weights: every saliency >= sigma_max, using uniform weights");
    return Eigen::VectorXd::Ones(sigmas.size());
  }
  return static_cast<double>(sigmas.size()) * w / total;
}

Eigen::VectorXd keypoint_weights_backward(const Eigen::VectorXd& sigmas, double sigma_max,
                                          const Eigen::VectorXd& grad_weights) {
  const Eigen::VectorXd w = (sigma_max - sigmas.array()).max(0.0).matrix();
  const double total = w.sum();
  Eigen::VectorXd g = Eigen::VectorXd::Zero(sigmas.size());
  if (!(total > 0.0)) return g;
  const double m = static_cast<double>(sigmas.size());
  // w_tilde_i = M w_i / S: dL/dw_j = M (g_j / S - sum_i g_i w_i / S^2)
  const double inner = grad_weights.dot(w);
  for (Eigen::Index j = 0; j < sigmas.size(); ++j) {
    if (w(j) <= 0.0) continue;
    const double g_w = m * (grad_weights(j) / total - inner / (total * total));
    g(j) = -g_w;
  }
  return g;
}

double matching_loss(const PairBatch& b, const MatchingConfig& cfg, PairBatchGrad* grad) {
  cfg.validate();
  b.validate(true);
  const Eigen::Index m = b.src_keypoints.rows();
  const double t = cfg.temperature;

  const SoftAssignment fwd_s = soft_assign(b.src_descriptors, b.tgt_descriptors, b.tgt_keypoints, t);
  const SoftAssignment fwd_t = soft_assign(b.tgt_descriptors, b.src_descriptors, b.src_keypoints, t);

  const Eigen::VectorXd w_s = cfg.use_weights ? keypoint_weights(b.src_sigmas, cfg.sigma_max)
                                              : Eigen::VectorXd::Ones(m);
  const Eigen::VectorXd w_t = cfg.use_weights ? keypoint_weights(b.tgt_sigmas, cfg.sigma_max)
                                              : Eigen::VectorXd::Ones(m);

  // r_s = R x_s + t - x_hat_s ; r_t = R x_hat_t + t - x_t
  const RowMatrix r_s = transform_rows(b.src_keypoints, b.gt) - fwd_s.soft_points;
  const RowMatrix r_t = transform_rows(fwd_t.soft_points, b.gt) - b.tgt_keypoints;
  const Eigen::VectorXd e_s = r_s.rowwise().squaredNorm();
  const Eigen::VectorXd e_t = r_t.rowwise().squaredNorm();
  const double loss = w_s.dot(e_s) + w_t.dot(e_t);

  if (grad != nullptr) {
    *grad = PairBatchGrad::zeros_like(b);
    const Mat3& rot = b.gt.rotation;
    const RowMatrix g_rs = 2.0 * (w_s.asDiagonal() * r_s);
    const RowMatrix g_rt = 2.0 * (w_t.asDiagonal() * r_t);

    grad->src_keypoints += g_rs * rot;               // d/dx_s of R x_s
    grad->tgt_keypoints -= g_rt;
    const RowMatrix g_soft_s = -g_rs;
    const RowMatrix g_soft_t = g_rt * rot;

    const auto gs = soft_assign_backward(b.src_descriptors, b.tgt_descriptors, b.tgt_keypoints, t,
                                         fwd_s, g_soft_s);
    grad->src_descriptors += gs.query_descriptors;
    grad->tgt_descriptors += gs.target_descriptors;
    grad->tgt_keypoints += gs.target_keypoints;

    const auto gt = soft_assign_backward(b.tgt_descriptors, b.src_descriptors, b.src_keypoints, t,
                                         fwd_t, g_soft_t);
    grad->tgt_descriptors += gt.query_descriptors;
    grad->src_descriptors += gt.target_descriptors;
    grad->src_keypoints += gt.target_keypoints;

    if (cfg.use_weights) {
      grad->src_sigmas += keypoint_weights_backward(b.src_sigmas, cfg.sigma_max, e_s);
      grad->tgt_sigmas += keypoint_weights_backward(b.tgt_sigmas, cfg.sigma_max, e_t);
    }
  }
  return loss;
}

double probabilistic_chamfer_loss(const PairBatch& b, PairBatchGrad* grad) {
  b.validate(false);
  const RowMatrix src = transform_rows(b.src_keypoints, b.gt);  // target frame
  const RowMatrix& tgt = b.tgt_keypoints;
  const RowMatrix d2 = pairwise_sq_distances(src, tgt);
  const Eigen::Index m = src.rows();
  const double inv_m = 1.0 / static_cast<double>(m);

  if (grad != nullptr) *grad = PairBatchGrad::zeros_like(b);
  RowMatrix g_src = RowMatrix::Zero(m, 3);

  double loss = 0.0;
  // Direction 0: each source keypoint against its nearest target keypoint.
  // Direction 1: each target keypoint against its nearest source keypoint.
  for (int dir = 0; dir < 2; ++dir) {
    for (Eigen::Index i = 0; i < m; ++i) {
      Eigen::Index j = 0;
      if (dir == 0) {
        d2.row(i).minCoeff(&j);
      } else {
        d2.col(i).minCoeff(&j);
      }
      const Eigen::Index si = dir == 0 ? i : j;
      const Eigen::Index ti = dir == 0 ? j : i;
      const double dist = std::sqrt(d2(si, ti));
      const double sigma = 0.5 * (b.src_sigmas(si) + b.tgt_sigmas(ti));
      if (!(sigma > 0.0)) throw NumericalError("probabilistic_chamfer_loss: non-positive saliency");
      loss += inv_m * (std::log(sigma) + dist / sigma);

      if (grad != nullptr) {
        const double g_sigma = inv_m * (1.0 / sigma - dist / (sigma * sigma));
        grad->src_sigmas(si) += 0.5 * g_sigma;
        grad->tgt_sigmas(ti) += 0.5 * g_sigma;
        if (dist > 0.0) {
          const Eigen::RowVector3d dir_vec = (src.row(si) - tgt.row(ti)) / dist;
          g_src.row(si) += inv_m / sigma * dir_vec;
          grad->tgt_keypoints.row(ti) -= inv_m / sigma * dir_vec;
        }
      }
    }
  }
  if (grad != nullptr) grad->src_keypoints += g_src * b.gt.rotation;
  return loss;
}

double point_to_point_loss(const RowMatrix& keypoints, const KdTree& cloud, RowMatrix* grad) {
  if (cloud.size() == 0) throw ConfigError("point_to_point_loss: empty cloud");
  const Eigen::Index m = keypoints.rows();
  if (grad != nullptr) *grad = RowMatrix::Zero(m, 3);
  if (m == 0) return 0.0;
  const double inv_m = 1.0 / static_cast<double>(m);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    const Vec3 x = keypoints.row(i).transpose();
    const Neighbor nb = cloud.nearest(x);
    loss += inv_m * nb.distance_sq;
    if (grad != nullptr) {
      grad->row(i) = 2.0 * inv_m * (x - cloud.points()[nb.index]).transpose();
    }
  }
  return loss;
}

}  // namespace rskdd
