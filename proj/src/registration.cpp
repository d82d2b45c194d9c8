#include "rskdd/registration.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include <json.hpp>

#include "rskdd/errors.hpp"

namespace rskdd {

void RansacConfig::validate() const {
  if (!(confidence > 0.0 && confidence < 1.0)) throw ConfigError("ransac: confidence must be in (0,1)");
  if (sample_size < 3) throw ConfigError("ransac: sample_size must be >= 3");
  if (max_iterations == 0) throw ConfigError("ransac: max_iterations must be >= 1");
  if (!(inlier_threshold > 0.0)) throw ConfigError("ransac: inlier_threshold must be > 0");
}

std::vector<Correspondence> match_descriptors(const RowMatrix& src, const RowMatrix& dst,
                                              bool mutual) {
  if (src.rows() == 0 || dst.rows() == 0) throw ConfigError("match_descriptors: empty set");
  if (src.cols() != dst.cols()) throw ConfigError("match_descriptors: dimension mismatch");

  auto nearest = [](const RowMatrix& from, Eigen::Index row, const RowMatrix& to) {
    Eigen::Index best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < to.rows(); ++j) {
      const double d = (from.row(row) - to.row(j)).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = j;
      }
    }
    return static_cast<std::size_t>(best);
  };

  std::vector<Correspondence> out;
  out.reserve(static_cast<std::size_t>(src.rows()));
  for (Eigen::Index i = 0; i < src.rows(); ++i) {
    const std::size_t j = nearest(src, i, dst);
    if (mutual && nearest(dst, static_cast<Eigen::Index>(j), src) != static_cast<std::size_t>(i)) {
      continue;
    }
    out.push_back({static_cast<std::size_t>(i), j});
  }
  return out;
}

std::size_t required_iterations(double inlier_fraction, double confidence, std::size_t sample_size,
                                std::size_t cap) {
  const double all_inliers = std::pow(inlier_fraction, static_cast<double>(sample_size));
  if (all_inliers >= 1.0) return 1;
  if (all_inliers <= 0.0) return cap;
  const double n = std::ceil(std::log(1.0 - confidence) / std::log(1.0 - all_inliers));
  if (!(n < static_cast<double>(cap))) return cap;
  return std::max<std::size_t>(1, static_cast<std::size_t>(n));
}

namespace {

struct Scored {
  std::vector<bool> mask;
  std::size_t count = 0;
};

Scored score(const RigidTransform& t, std::span<const Correspondence> corr,
             std::span<const Vec3> src, std::span<const Vec3> dst, double threshold) {
  Scored s;
  s.mask.resize(corr.size());
  const double th2 = threshold * threshold;
  for (std::size_t i = 0; i < corr.size(); ++i) {
    const bool in = (t.apply(src[corr[i].src]) - dst[corr[i].dst]).squaredNorm() < th2;
    s.mask[i] = in;
    s.count += in ? 1 : 0;
  }
  return s;
}

bool collinear(const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 ab = b - a;
  const Vec3 ac = c - a;
  const double scale = ab.squaredNorm() * ac.squaredNorm();
  return !(scale > 0.0) || ab.cross(ac).squaredNorm() <= 1e-12 * scale;
}

}  // namespace

RegistrationResult ransac_register(std::span<const Correspondence> corr,
                                   std::span<const Vec3> src, std::span<const Vec3> dst,
                                   const RansacConfig& cfg, const RansacObserver& observer) {
  cfg.validate();
  RegistrationResult result;
  result.inliers.assign(corr.size(), false);
  if (corr.size() < cfg.sample_size) return result;
  for (const auto& c : corr) {
    if (c.src >= src.size() || c.dst >= dst.size()) {
      throw ConfigError("ransac_register: correspondence index out of range");
    }
  }

  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<std::size_t> pick(0, corr.size() - 1);
  Scored best;
  RigidTransform best_model;
  std::size_t needed = cfg.max_iterations;
  std::size_t iterations = 0;
  // Degenerate draws do not count, but a hard limit stops pathological inputs.
  std::size_t draws = 0;
  const std::size_t max_draws = 100 * cfg.max_iterations;

  std::vector<Vec3> s_pts(cfg.sample_size);
  std::vector<Vec3> d_pts(cfg.sample_size);
  std::vector<std::size_t> sample(cfg.sample_size);
  while (iterations < needed && draws < max_draws) {
    ++draws;
    for (std::size_t k = 0; k < cfg.sample_size; ++k) {
      bool fresh = false;
      while (!fresh) {
        sample[k] = pick(rng);
        fresh = std::find(sample.begin(), sample.begin() + static_cast<std::ptrdiff_t>(k), sample[k]) ==
                sample.begin() + static_cast<std::ptrdiff_t>(k);
      }
      s_pts[k] = src[corr[sample[k]].src];
      d_pts[k] = dst[corr[sample[k]].dst];
    }
    if (collinear(s_pts[0], s_pts[1], s_pts[2]) || collinear(d_pts[0], d_pts[1], d_pts[2])) continue;

    RigidTransform model;
    try {
      model = kabsch_align(s_pts, d_pts);
    } catch (const DegenerateAlignmentError&) {
      continue;
    }
    ++iterations;
    Scored s = score(model, corr, src, dst, cfg.inlier_threshold);
    if (observer) observer(model, s.count);
    if (s.count > best.count) {
      best = std::move(s);
      best_model = model;
      const double w = static_cast<double>(best.count) / static_cast<double>(corr.size());
      needed = required_iterations(w, cfg.confidence, cfg.sample_size, cfg.max_iterations);
    }
  }

  result.iterations = iterations;
  if (best.count < 3) return result;

  std::vector<Vec3> in_src;
  std::vector<Vec3> in_dst;
  for (std::size_t i = 0; i < corr.size(); ++i) {
    if (!best.mask[i]) continue;
    in_src.push_back(src[corr[i].src]);
    in_dst.push_back(dst[corr[i].dst]);
  }
  RigidTransform refined = best_model;
  try {
    refined = kabsch_align(in_src, in_dst);
  } catch (const DegenerateAlignmentError&) {
  }
  // Keep the refit only if it does not lose inliers.
  Scored rescored = score(refined, corr, src, dst, cfg.inlier_threshold);
  if (rescored.count < best.count) {
    refined = best_model;
    rescored = best;
  }

  result.transform = refined;
  result.inliers = rescored.mask;
  result.inlier_ratio = static_cast<double>(rescored.count) / static_cast<double>(corr.size());
  double sq = 0.0;
  for (std::size_t i = 0; i < corr.size(); ++i) {
    if (rescored.mask[i]) sq += (refined.apply(src[corr[i].src]) - dst[corr[i].dst]).squaredNorm();
  }
  result.rmse = std::sqrt(sq / static_cast<double>(rescored.count));
  result.success = true;
  return result;
}

std::string RegistrationResult::to_json() const {
  nlohmann::json j;
  std::vector<double> rot;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) rot.push_back(transform.rotation(r, c));
  }
  j["rotation"] = rot;
  j["translation"] = {transform.translation.x(), transform.translation.y(), transform.translation.z()};
  j["inlier_ratio"] = inlier_ratio;
  j["iterations"] = iterations;
  j["rmse"] = rmse;
  j["success"] = success;
  return j.dump(2);
}

}  // namespace rskdd
