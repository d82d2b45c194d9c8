#include "rskdd/evaluation.hpp"

#include <spdlog/spdlog.h>

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "rskdd/errors.hpp"

namespace rskdd {
namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

void EvalConfig::validate() const {
  if (!(eps_r > 0.0) || !(eps_p > 0.0) || !(rte_max > 0.0) || !(rre_max_deg > 0.0)) {
    throw ConfigError("eval: thresholds must be > 0");
  }
}

double repeatability(std::span<const Vec3> src, std::span<const Vec3> dst, const RigidTransform& gt,
                     double eps_r) {
  if (src.empty() || dst.empty()) throw ConfigError("repeatability: empty keypoint set");
  const KdTree index(std::vector<Vec3>(dst.begin(), dst.end()));
  std::size_t hits = 0;
  for (const auto& p : src) {
    if (std::sqrt(index.nearest(gt.apply(p)).distance_sq) < eps_r) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(src.size());
}

double precision(std::span<const Vec3> src, const RowMatrix& src_desc, std::span<const Vec3> dst,
                 const RowMatrix& dst_desc, const RigidTransform& gt, double eps_p) {
  if (src.size() != static_cast<std::size_t>(src_desc.rows()) ||
      dst.size() != static_cast<std::size_t>(dst_desc.rows())) {
    throw ConfigError("precision: keypoints and descriptors are not index-aligned");
  }
  const auto matches = match_descriptors(src_desc, dst_desc);
  std::size_t valid = 0;
  for (const auto& m : matches) {
    if ((dst[m.dst] - gt.apply(src[m.src])).norm() < eps_p) ++valid;
  }
  return static_cast<double>(valid) / static_cast<double>(src.size());
}

RegistrationErrors registration_errors(const RigidTransform& est, const RigidTransform& gt) {
  RegistrationErrors e;
  e.rte = (est.translation - gt.translation).norm();
  const double c = std::clamp(((gt.rotation.transpose() * est.rotation).trace() - 1.0) / 2.0, -1.0, 1.0);
  e.rre_deg = std::acos(c) * 180.0 / std::numbers::pi;
  return e;
}

bool registration_succeeded(const RegistrationErrors& e, const EvalConfig& cfg) {
  return e.rte < cfg.rte_max && e.rre_deg < cfg.rre_max_deg;
}

MeanStd MetricsReport::aggregate(const std::function<double(const PairMetrics&)>& field) const {
  MeanStd out;
  if (pairs.empty()) return out;
  double sum = 0.0;
  for (const auto& p : pairs) sum += field(p);
  out.mean = sum / static_cast<double>(pairs.size());
  double var = 0.0;
  for (const auto& p : pairs) var += (field(p) - out.mean) * (field(p) - out.mean);
  out.std = std::sqrt(var / static_cast<double>(pairs.size()));
  return out;
}

MeanStd MetricsReport::repeatability(std::size_t slot) const {
  return aggregate([slot](const PairMetrics& p) { return p.repeatability.at(slot); });
}

MeanStd MetricsReport::precision(std::size_t slot) const {
  return aggregate([slot](const PairMetrics& p) { return p.precision.at(slot); });
}

MeanStd MetricsReport::random_repeatability(std::size_t slot) const {
  return aggregate([slot](const PairMetrics& p) { return p.random_repeatability.at(slot); });
}

double MetricsReport::success_rate() const {
  return aggregate([](const PairMetrics& p) { return p.success ? 1.0 : 0.0; }).mean;
}

std::string MetricsReport::pairs_csv() const {
  std::ostringstream os;
  os << "pair";
  for (auto n : counts) os << ",rep_" << n;
  for (auto n : counts) os << ",prec_" << n;
  for (auto n : counts) os << ",rand_rep_" << n;
  os << ",rte,rre,success,inlier_ratio,iterations\n";
  for (const auto& p : pairs) {
    os << p.id;
    for (double v : p.repeatability) os << ',' << fmt_double(v);
    for (double v : p.precision) os << ',' << fmt_double(v);
    for (double v : p.random_repeatability) os << ',' << fmt_double(v);
    os << ',' << fmt_double(p.rte) << ',' << fmt_double(p.rre_deg) << ',' << (p.success ? 1 : 0)
       << ',' << fmt_double(p.inlier_ratio) << ',' << p.iterations << '\n';
  }
  return os.str();
}

std::string MetricsReport::report_json() const {
  nlohmann::json j;
  j["schema_version"] = kSchemaVersion;
  j["pairs_evaluated"] = pairs.size();
  j["pairs_skipped"] = skipped.size();
  j["skipped"] = skipped;
  auto ms = [](const MeanStd& v) { return nlohmann::json{{"mean", v.mean}, {"std", v.std}}; };
  nlohmann::json per_count = nlohmann::json::array();
  for (std::size_t s = 0; s < counts.size(); ++s) {
    per_count.push_back({{"keypoints", counts[s]},
                         {"repeatability", ms(repeatability(s))},
                         {"precision", ms(precision(s))},
                         {"random_repeatability", ms(random_repeatability(s))}});
  }
  j["per_keypoint_count"] = per_count;
  j["rte"] = ms(aggregate([](const PairMetrics& p) { return p.rte; }));
  j["rre"] = ms(aggregate([](const PairMetrics& p) { return p.rre_deg; }));
  j["success_rate"] = success_rate();
  j["inlier_ratio"] = ms(aggregate([](const PairMetrics& p) { return p.inlier_ratio; }));
  j["iterations"] =
      ms(aggregate([](const PairMetrics& p) { return static_cast<double>(p.iterations); }));
  return j.dump(2) + "\n";
}

std::string MetricsReport::timings_csv() const {
  std::ostringstream os;
  os << "pair,sample_ms,cluster_ms,detect_ms,describe_ms,match_ms,ransac_ms\n";
  for (const auto& p : pairs) {
    const auto& t = p.timings;
    os << p.id << ',' << t.sample_ms << ',' << t.cluster_ms << ',' << t.detect_ms << ','
       << t.describe_ms << ',' << t.match_ms << ',' << t.ransac_ms << '\n';
  }
  return os.str();
}

void MetricsReport::write(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  auto dump = [&](const char* name, const std::string& text) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw DataError("cannot write " + (dir / name).string());
    out << text;
  };
  dump("report.json", report_json());
  dump("pairs.csv", pairs_csv());
  dump("timings.csv", timings_csv());
}

namespace {

struct ViewOutput {
  KeypointSet keypoints;
  DescriptorSet descriptors;
};

ViewOutput run_view(const PointCloud& cloud, const Model& model, DetectConfig cfg,
                    std::uint64_t seed, StageTimings& timings) {
  cfg.seed = seed;
  auto t0 = Clock::now();
  const KdTree index(cloud);
  const auto centers = random_sample_candidates(cloud, cfg.m, cfg.seed);
  timings.sample_ms += ms_since(t0);

  t0 = Clock::now();
  std::vector<Cluster> clusters(centers.size());
  for (std::size_t i = 0; i < centers.size(); ++i) {
    clusters[i] = random_dilation_cluster(index, cloud, centers[i], cfg.cluster,
                                          derive_seed(cfg.seed, centers[i]));
  }
  timings.cluster_ms += ms_since(t0);

  t0 = Clock::now();
  ViewOutput out;
  out.keypoints = detect_clusters(model, std::move(clusters));
  timings.detect_ms += ms_since(t0);

  t0 = Clock::now();
  out.descriptors = describe(out.keypoints, model);
  timings.describe_ms += ms_since(t0);
  return out;
}

std::vector<Vec3> centers_of(const KeypointSet& set, std::size_t n) {
  std::vector<Vec3> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(set.clusters[i].center);
  return out;
}

}  // namespace

MetricsReport evaluate_corpus(std::size_t pair_count, const PairLoader& loader, const Model& model,
                              const EvalSettings& settings) {
  if (pair_count == 0) throw ConfigError("evaluate_corpus: empty corpus");
  settings.eval.validate();
  settings.ransac.validate();

  MetricsReport report;
  for (std::size_t n : settings.eval.keypoint_counts) {
    if (n <= settings.detect.m) report.counts.push_back(n);
  }
  if (report.counts.empty()) report.counts.push_back(settings.detect.m);

  for (std::size_t idx = 0; idx < pair_count; ++idx) {
    EvalPair pair;
    try {
      pair = loader(idx);
    } catch (const DataError& e) {
      spdlog::warn("evaluate_corpus: skipping pair {}: {}", idx, e.what());
      report.skipped.push_back(std::to_string(idx));
      continue;
    }

    PairMetrics pm;
    pm.id = pair.id.empty() ? std::to_string(idx) : pair.id;
    pm.counts = report.counts;
    // Both views share a seed: the clouds differ, so the sampled centers do too,
    // while an identical pair yields identical keypoints.
    const std::uint64_t view_seed = derive_seed(settings.detect.seed, idx);
    const auto src = run_view(pair.source, model, settings.detect, view_seed, pm.timings);
    const auto dst = run_view(pair.target, model, settings.detect, view_seed, pm.timings);

    for (std::size_t n : report.counts) {
      const auto so = lowest_sigma_order(src.keypoints, n);
      const auto d_o = lowest_sigma_order(dst.keypoints, n);
      const auto skp = src.keypoints.select(so);
      const auto dkp = dst.keypoints.select(d_o);
      pm.repeatability.push_back(
          repeatability(skp.keypoints, dkp.keypoints, pair.gt, settings.eval.eps_r));
      pm.precision.push_back(precision(skp.keypoints, src.descriptors.select(so).values,
                                       dkp.keypoints, dst.descriptors.select(d_o).values, pair.gt,
                                       settings.eval.eps_p));
      pm.random_repeatability.push_back(repeatability(
          centers_of(src.keypoints, n), centers_of(dst.keypoints, n), pair.gt, settings.eval.eps_r));
    }

    const std::size_t reg_n = std::min(settings.eval.registration_keypoints, src.keypoints.size());
    const auto so = lowest_sigma_order(src.keypoints, reg_n);
    const auto d_o = lowest_sigma_order(dst.keypoints, reg_n);
    auto t0 = Clock::now();
    const auto corr = match_descriptors(src.descriptors.select(so).values,
                                        dst.descriptors.select(d_o).values,
                                        settings.ransac.mutual_filter);
    pm.timings.match_ms = ms_since(t0);

    RansacConfig rc = settings.ransac;
    rc.seed = derive_seed(settings.ransac.seed, idx);
    t0 = Clock::now();
    const auto reg = ransac_register(corr, src.keypoints.select(so).keypoints,
                                     dst.keypoints.select(d_o).keypoints, rc);
    pm.timings.ransac_ms = ms_since(t0);

    const auto err = registration_errors(reg.transform, pair.gt);
    pm.rte = err.rte;
    pm.rre_deg = err.rre_deg;
    pm.success = reg.success && registration_succeeded(err, settings.eval);
    pm.inlier_ratio = reg.inlier_ratio;
    pm.iterations = reg.iterations;
    report.pairs.push_back(std::move(pm));
  }
  return report;
}

}  // namespace rskdd
