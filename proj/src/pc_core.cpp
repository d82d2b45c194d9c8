#include "rskdd/pc_core.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <map>
#include <tuple>

#include "rskdd/errors.hpp"
#include "rskdd/spatial.hpp"

namespace rskdd {

PointCloud::PointCloud(std::vector<Vec3> positions)
    : positions_(std::move(positions)), channels_(positions_.size(), 0) {}

PointCloud::PointCloud(std::vector<Vec3> positions, RowMatrix channels)
    : positions_(std::move(positions)), channels_(std::move(channels)) {
  if (static_cast<std::size_t>(channels_.rows()) != positions_.size()) {
    throw ConfigError("PointCloud: channel rows do not match point count");
  }
}

void PointCloud::set_channels(RowMatrix channels) {
  if (static_cast<std::size_t>(channels.rows()) != positions_.size()) {
    throw ConfigError("PointCloud: channel rows do not match point count");
  }
  channels_ = std::move(channels);
}

void PointCloud::validate() const {
  if (static_cast<std::size_t>(channels_.rows()) != positions_.size()) {
    throw ConfigError("PointCloud: channel rows do not match point count");
  }
  for (const auto& p : positions_) {
    if (!p.allFinite()) throw ConfigError("PointCloud: non-finite coordinate");
  }
  if (!channels_.allFinite()) throw ConfigError("PointCloud: non-finite channel value");
}

PointCloud PointCloud::select(std::span<const std::size_t> indices) const {
  std::vector<Vec3> pos;
  pos.reserve(indices.size());
  RowMatrix ch(static_cast<Eigen::Index>(indices.size()), channels_.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    pos.push_back(positions_.at(indices[i]));
    if (ch.cols() > 0) ch.row(static_cast<Eigen::Index>(i)) = channels_.row(static_cast<Eigen::Index>(indices[i]));
  }
  return PointCloud(std::move(pos), std::move(ch));
}

RigidTransform RigidTransform::from_axis_angle(const Vec3& axis, double angle_rad,
                                               const Vec3& t) {
  RigidTransform out;
  out.rotation = Eigen::AngleAxisd(angle_rad, axis.normalized()).toRotationMatrix();
  out.translation = t;
  return out;
}

RigidTransform RigidTransform::inverse() const {
  RigidTransform out;
  out.rotation = rotation.transpose();
  out.translation = -(out.rotation * translation);
  return out;
}

RigidTransform RigidTransform::operator*(const RigidTransform& other) const {
  RigidTransform out;
  out.rotation = rotation * other.rotation;
  out.translation = rotation * other.translation + translation;
  return out;
}

bool RigidTransform::is_valid(double tol) const {
  if (!rotation.allFinite() || !translation.allFinite()) return false;
  const double ortho = (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
  return ortho <= tol && std::abs(rotation.determinant() - 1.0) <= tol;
}

void RigidTransform::validate(double tol) const {
  if (!is_valid(tol)) throw ConfigError("RigidTransform: rotation is not in SO(3)");
}

Eigen::Matrix4d RigidTransform::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = rotation;
  m.topRightCorner<3, 1>() = translation;
  return m;
}

PointCloud voxel_downsample(const PointCloud& cloud, double grid_size) {
  if (!(grid_size > 0.0)) throw ConfigError("voxel_downsample: grid_size must be > 0");
  if (cloud.empty()) return PointCloud({}, RowMatrix(0, cloud.channel_width()));

  using Key = std::tuple<std::int64_t, std::int64_t, std::int64_t>;
  struct Accum {
    Vec3 sum = Vec3::Zero();
    Eigen::VectorXd channels;
    std::size_t count = 0;
  };
  std::map<Key, Accum> voxels;
  const int width = cloud.channel_width();
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec3& p = cloud.position(i);
    const Key key{static_cast<std::int64_t>(std::floor(p.x() / grid_size)),
                  static_cast<std::int64_t>(std::floor(p.y() / grid_size)),
                  static_cast<std::int64_t>(std::floor(p.z() / grid_size))};
    Accum& acc = voxels[key];
    if (acc.count == 0) acc.channels = Eigen::VectorXd::Zero(width);
    acc.sum += p;
    if (width > 0) acc.channels += cloud.channels().row(static_cast<Eigen::Index>(i)).transpose();
    ++acc.count;
  }

  std::vector<Vec3> positions;
  positions.reserve(voxels.size());
  RowMatrix channels(static_cast<Eigen::Index>(voxels.size()), width);
  Eigen::Index row = 0;
  for (const auto& [key, acc] : voxels) {
    const double inv = 1.0 / static_cast<double>(acc.count);
    positions.push_back(acc.sum * inv);
    if (width > 0) channels.row(row) = acc.channels.transpose() * inv;
    ++row;
  }
  return PointCloud(std::move(positions), std::move(channels));
}

PointCloud estimate_normals_curvature(const PointCloud& cloud, int k_normal,
                                      NormalStats* stats) {
  if (k_normal < 3) throw ConfigError("estimate_normals_curvature: k_normal must be >= 3");
  if (cloud.size() < static_cast<std::size_t>(k_normal)) {
    throw ConfigError("estimate_normals_curvature: fewer points than k_normal");
  }
  const KdTree tree(cloud);
  const auto n = static_cast<std::int64_t>(cloud.size());
  RowMatrix channels(n, channel::kDefaultWidth);
  std::size_t degenerate = 0;

#if defined(RSKDD_HAVE_OPENMP)
#pragma omp parallel for schedule(static) reduction(+ : degenerate)
#endif
  for (std::int64_t i = 0; i < n; ++i) {
    const Vec3& p = cloud.position(static_cast<std::size_t>(i));
    const auto nbrs = tree.knn(p, static_cast<std::size_t>(k_normal));
    Vec3 mean = Vec3::Zero();
    for (const auto& nb : nbrs) mean += cloud.position(nb.index);
    mean /= static_cast<double>(nbrs.size());
    Mat3 cov = Mat3::Zero();
    for (const auto& nb : nbrs) {
      const Vec3 d = cloud.position(nb.index) - mean;
      cov += d * d.transpose();
    }
    cov /= static_cast<double>(nbrs.size());

    Eigen::SelfAdjointEigenSolver<Mat3> solver(cov);
    const Vec3 eval = solver.eigenvalues().cwiseMax(0.0);  // ascending
    const double total = eval.sum();
    // Rank < 2 (collinear or coincident neighbors): no plane to fit.
    if (!(total > 0.0) || eval(1) <= 1e-12 * eval(2)) {
      channels.row(i) << 0.0, 0.0, 1.0, 0.0;
      ++degenerate;
      continue;
    }
    Vec3 normal = solver.eigenvectors().col(0).normalized();
    if (normal.dot(-p) < 0.0) normal = -normal;
    channels.row(i) << normal.x(), normal.y(), normal.z(), eval(0) / total;
  }

  if (degenerate > 0) {
    spdlog::debug("estimate_normals_curvature: {} degenerate neighborhoods", degenerate);
  }
  if (stats != nullptr) stats->degenerate = degenerate;
  return PointCloud(cloud.positions(), std::move(channels));
}

PointCloud apply_transform(const PointCloud& cloud, const RigidTransform& transform) {
  std::vector<Vec3> positions;
  positions.reserve(cloud.size());
  for (const auto& p : cloud.positions()) positions.push_back(transform.apply(p));
  RowMatrix channels = cloud.channels();
  if (cloud.channel_width() >= 3) {
    for (Eigen::Index i = 0; i < channels.rows(); ++i) {
      const Vec3 n = channels.row(i).head<3>().transpose();
      channels.row(i).head<3>() = (transform.rotation * n).transpose();
    }
  }
  return PointCloud(std::move(positions), std::move(channels));
}

RigidTransform kabsch_align(std::span<const Vec3> src, std::span<const Vec3> dst) {
  if (src.size() != dst.size()) throw ConfigError("kabsch_align: length mismatch");
  if (src.size() < 3) throw DegenerateAlignmentError("kabsch_align: fewer than 3 pairs");

  Vec3 cs = Vec3::Zero();
  Vec3 cd = Vec3::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) {
    cs += src[i];
    cd += dst[i];
  }
  cs /= static_cast<double>(src.size());
  cd /= static_cast<double>(dst.size());

  Mat3 h = Mat3::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) h += (src[i] - cs) * (dst[i] - cd).transpose();

  Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sv = svd.singularValues();
  if (!(sv(0) > 0.0) || sv(1) <= 1e-12 * sv(0)) {
    throw DegenerateAlignmentError("kabsch_align: rank-deficient cross-covariance");
  }
  const Mat3 u = svd.matrixU();
  const Mat3 v = svd.matrixV();
  Mat3 d = Mat3::Identity();
  if ((v * u.transpose()).determinant() < 0.0) d(2, 2) = -1.0;

  RigidTransform out;
  out.rotation = v * d * u.transpose();
  out.translation = cd - out.rotation * cs;
  return out;
}

double alignment_residual(const RigidTransform& transform, std::span<const Vec3> src,
                          std::span<const Vec3> dst) {
  double sum = 0.0;
  for (std::size_t i = 0; i < src.size(); ++i) sum += (transform.apply(src[i]) - dst[i]).squaredNorm();
  return sum;
}

}  // namespace rskdd
