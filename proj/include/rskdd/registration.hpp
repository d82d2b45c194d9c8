#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "rskdd/pc_core.hpp"
#include "rskdd/settings.hpp"

namespace rskdd {

struct Correspondence {
  std::size_t src;
  std::size_t dst;
  bool operator==(const Correspondence&) const = default;
};

/// For each source row, the Euclidean-nearest target row (ties to the lower
/// index). With mutual set, pairs that are not reciprocal are dropped.
std::vector<Correspondence> match_descriptors(const RowMatrix& src, const RowMatrix& dst,
                                              bool mutual = false);

/// ceil(ln(1 - confidence) / ln(1 - w^s)) clamped to [1, cap]; w = inlier fraction.
std::size_t required_iterations(double inlier_fraction, double confidence, std::size_t sample_size,
                                std::size_t cap);

struct RegistrationResult {
  RigidTransform transform;
  std::vector<bool> inliers;
  double inlier_ratio = 0.0;
  std::size_t iterations = 0;
  double rmse = 0.0;
  bool success = false;  // a model with >= 3 inliers was found

  std::string to_json() const;
};

/// Sees every scored hypothesis with its inlier count.
using RansacObserver = std::function<void(const RigidTransform&, std::size_t)>;

/// RANSAC over correspondences with adaptive iteration count, followed by a
/// least-squares refit on the inliers of the best hypothesis.
RegistrationResult ransac_register(std::span<const Correspondence> correspondences,
                                   std::span<const Vec3> src_keypoints,
                                   std::span<const Vec3> dst_keypoints, const RansacConfig& config,
                                   const RansacObserver& observer = {});

}  // namespace rskdd
