#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "rskdd/descriptor.hpp"
#include "rskdd/registration.hpp"
#include "rskdd/settings.hpp"

namespace rskdd {

/// Fraction of source keypoints whose nearest target keypoint lies within
/// eps_r once the source is mapped by gt.
double repeatability(std::span<const Vec3> src, std::span<const Vec3> dst, const RigidTransform& gt,
                     double eps_r);

/// Fraction of descriptor nearest-neighbor matches landing within eps_p of
/// the ground-truth location gt(src_i).
double precision(std::span<const Vec3> src, const RowMatrix& src_desc, std::span<const Vec3> dst,
                 const RowMatrix& dst_desc, const RigidTransform& gt, double eps_p);

struct RegistrationErrors {
  double rte = 0.0;      // meters
  double rre_deg = 0.0;  // degrees
};

RegistrationErrors registration_errors(const RigidTransform& est, const RigidTransform& gt);
bool registration_succeeded(const RegistrationErrors& e, const EvalConfig& cfg);

/// One evaluation pair; target = gt(source) up to sampling and noise.
struct EvalPair {
  std::string id;
  PointCloud source;
  PointCloud target;
  RigidTransform gt;
};

/// Returns pair i. Throws DataError when the pair cannot be loaded; such pairs
/// are skipped and counted.
using PairLoader = std::function<EvalPair(std::size_t)>;

struct StageTimings {
  double sample_ms = 0.0;
  double cluster_ms = 0.0;
  double detect_ms = 0.0;
  double describe_ms = 0.0;
  double match_ms = 0.0;
  double ransac_ms = 0.0;
};

struct PairMetrics {
  std::string id;
  std::vector<std::size_t> counts;
  std::vector<double> repeatability;         // per count
  std::vector<double> precision;             // per count
  std::vector<double> random_repeatability;  // sampled centers, per count
  double rte = 0.0;
  double rre_deg = 0.0;
  bool success = false;
  double inlier_ratio = 0.0;
  std::size_t iterations = 0;
  StageTimings timings;
};

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

struct MetricsReport {
  static constexpr int kSchemaVersion = 1;
  std::vector<std::size_t> counts;
  std::vector<PairMetrics> pairs;
  std::vector<std::string> skipped;

  MeanStd aggregate(const std::function<double(const PairMetrics&)>& field) const;
  MeanStd repeatability(std::size_t count_slot) const;
  MeanStd precision(std::size_t count_slot) const;
  MeanStd random_repeatability(std::size_t count_slot) const;
  double success_rate() const;

  /// Fixed columns: pair, rep_<n>..., prec_<n>..., rand_rep_<n>..., rte, rre,
  /// success, inlier_ratio, iterations.
  std::string pairs_csv() const;
  /// Aggregates only; deterministic for a fixed corpus and seed.
  std::string report_json() const;
  /// Wall-clock per stage, kept apart from the deterministic outputs.
  std::string timings_csv() const;
  void write(const std::filesystem::path& dir) const;
};

struct EvalSettings {
  DetectConfig detect;
  RansacConfig ransac;
  EvalConfig eval;
};

/// Detects, describes, matches and registers every pair. Seeds are derived
/// from the pair index so the result does not depend on evaluation order.
MetricsReport evaluate_corpus(std::size_t pair_count, const PairLoader& loader, const Model& model,
                              const EvalSettings& settings);

}  // namespace rskdd
