#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <span>
#include <vector>

namespace rskdd {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Channel layout attached by estimate_normals_curvature.
namespace channel {
inline constexpr int kNormalX = 0;
inline constexpr int kCurvature = 3;
inline constexpr int kDefaultWidth = 4;
}  // namespace channel

/// N points with xyz positions (meters) and a uniform-width channel row per point.
class PointCloud {
 public:
  PointCloud() = default;
  explicit PointCloud(std::vector<Vec3> positions);
  PointCloud(std::vector<Vec3> positions, RowMatrix channels);

  std::size_t size() const { return positions_.size(); }
  bool empty() const { return positions_.empty(); }
  int channel_width() const { return static_cast<int>(channels_.cols()); }
  bool has_channels() const { return channels_.cols() > 0; }

  const std::vector<Vec3>& positions() const { return positions_; }
  std::vector<Vec3>& positions() { return positions_; }
  const Vec3& position(std::size_t i) const { return positions_[i]; }

  const RowMatrix& channels() const { return channels_; }
  RowMatrix& channels() { return channels_; }

  /// Replaces the channel block; row count must equal size().
  void set_channels(RowMatrix channels);

  /// Throws ConfigError when lengths differ or any value is non-finite.
  void validate() const;

  /// Subset in the order given by indices.
  PointCloud select(std::span<const std::size_t> indices) const;

 private:
  std::vector<Vec3> positions_;
  RowMatrix channels_;
};

/// Rotation in SO(3) plus translation; maps x to R x + t.
struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static RigidTransform identity() { return {}; }
  static RigidTransform from_axis_angle(const Vec3& axis, double angle_rad, const Vec3& t);

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
  RigidTransform inverse() const;
  /// (*this) after other: x -> this(other(x)).
  RigidTransform operator*(const RigidTransform& other) const;

  bool is_valid(double tol = 1e-6) const;
  /// Throws ConfigError unless is_valid(tol).
  void validate(double tol = 1e-6) const;

  Eigen::Matrix4d matrix() const;
};

/// Centroid per occupied voxel of edge grid_size; channels averaged. Output is
/// ordered by voxel key so the result does not depend on hashing.
PointCloud voxel_downsample(const PointCloud& cloud, double grid_size);

struct NormalStats {
  std::size_t degenerate = 0;
};

/// PCA normal and surface variation (lambda_min / sum lambda) over k_normal
/// nearest neighbors. Normals face the sensor at the origin. Channels are
/// replaced by [nx, ny, nz, curvature].
PointCloud estimate_normals_curvature(const PointCloud& cloud, int k_normal = 16,
                                      NormalStats* stats = nullptr);

/// Positions mapped by R x + t, normal channels rotated, curvature untouched.
PointCloud apply_transform(const PointCloud& cloud, const RigidTransform& transform);

/// Least-squares rigid transform taking src onto dst. Throws
/// DegenerateAlignmentError for fewer than 3 pairs or a collinear configuration.
RigidTransform kabsch_align(std::span<const Vec3> src, std::span<const Vec3> dst);

/// Sum of squared residuals |T(src_i) - dst_i|^2.
double alignment_residual(const RigidTransform& transform, std::span<const Vec3> src,
                          std::span<const Vec3> dst);

}  // namespace rskdd
