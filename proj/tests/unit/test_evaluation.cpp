#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "rskdd/errors.hpp"
#include "rskdd/evaluation.hpp"
#include "rskdd/synth.hpp"
#include "test_util.hpp"

using namespace rskdd;
using rskdd::test::random_matrix;
using rskdd::test::random_points;

namespace {

double brute_repeatability(const std::vector<Vec3>& s, const std::vector<Vec3>& d,
                           const RigidTransform& gt, double eps) {
  int hit = 0;
  for (const auto& p : s) {
    double best = 1e300;
    for (const auto& q : d) best = std::min(best, (gt.apply(p) - q).norm());
    if (best < eps) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(s.size());
}

double brute_precision(const std::vector<Vec3>& s, const RowMatrix& sd, const std::vector<Vec3>& d,
                       const RowMatrix& dd, const RigidTransform& gt, double eps) {
  int hit = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    std::size_t best = 0;
    double bd = 1e300;
    for (std::size_t j = 0; j < d.size(); ++j) {
      const double dist = (sd.row(static_cast<Eigen::Index>(i)) - dd.row(static_cast<Eigen::Index>(j))).squaredNorm();
      if (dist < bd) {
        bd = dist;
        best = j;
      }
    }
    if ((d[best] - gt.apply(s[i])).norm() < eps) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(s.size());
}

}  // namespace

TEST_CASE("repeatability") {
  std::mt19937_64 rng(1);
  const auto gt = RigidTransform::from_axis_angle(Vec3::UnitZ(), 0.4, Vec3(1, 2, 0));
  const auto src = random_points(40, rng);
  std::vector<Vec3> dst;
  for (const auto& p : src) dst.push_back(gt.apply(p));
  CHECK(repeatability(src, dst, gt, 0.5) == 1.0);

  const std::vector<Vec3> one{Vec3::Zero()};
  const std::vector<Vec3> far{Vec3(1.0, 0, 0)};
  CHECK(repeatability(one, far, RigidTransform::identity(), 0.5) == 0.0);

  for (int trial = 0; trial < 20; ++trial) {
    const auto s = random_points(64, rng, 2.0);
    const auto d = random_points(64, rng, 2.0);
    double prev = 0.0;
    for (double eps : {0.1, 0.3, 0.5, 1.0}) {
      const double r = repeatability(s, d, gt, eps);
      CHECK(r == brute_repeatability(s, d, gt, eps));
      CHECK(r >= prev);
      CHECK(r <= 1.0);
      prev = r;
    }
  }
  CHECK_THROWS_AS(repeatability({}, dst, gt, 0.5), ConfigError);
}

TEST_CASE("precision") {
  std::mt19937_64 rng(2);
  const auto gt = RigidTransform::from_axis_angle(Vec3::UnitZ(), -0.3, Vec3(0, 1, 0));
  const auto src = random_points(10, rng);
  std::vector<Vec3> dst;
  for (const auto& p : src) dst.push_back(gt.apply(p));
  const RowMatrix desc = random_matrix(10, 6, rng);
  CHECK(precision(src, desc, dst, desc, gt, 1.0) == 1.0);

  // Each source descriptor equals the descriptor of its farthest target.
  const std::vector<Vec3> line{Vec3(0, 0, 0), Vec3(10, 0, 0), Vec3(20, 0, 0)};
  RowMatrix sd(3, 1);
  sd << 2.0, 2.0, 0.0;
  RowMatrix dd(3, 1);
  dd << 0.0, 1.0, 2.0;
  CHECK(precision(line, sd, line, dd, RigidTransform::identity(), 1.0) == 0.0);

  for (int trial = 0; trial < 20; ++trial) {
    const auto s = random_points(static_cast<std::size_t>(10 + trial * 2), rng, 2.0);
    const auto d = random_points(static_cast<std::size_t>(10 + trial * 2), rng, 2.0);
    const RowMatrix a = random_matrix(static_cast<Eigen::Index>(s.size()), 4, rng);
    const RowMatrix b = random_matrix(static_cast<Eigen::Index>(d.size()), 4, rng);
    double prev = 0.0;
    for (double eps : {0.5, 1.0, 2.0}) {
      const double p = precision(s, a, d, b, gt, eps);
      CHECK(p == brute_precision(s, a, d, b, gt, eps));
      CHECK(p >= prev);
      prev = p;
    }
  }
  CHECK_THROWS_AS(precision(src, desc, dst, RowMatrix(3, 6), gt, 1.0), ConfigError);
}

TEST_CASE("registration errors") {
  const auto gt = RigidTransform::from_axis_angle(Vec3(1, 1, 0), 0.3, Vec3(1, 2, 3));
  auto e = registration_errors(gt, gt);
  CHECK(e.rte == 0.0);
  CHECK(e.rre_deg < 1e-5);  // acos near 1 loses precision

  const auto rz = RigidTransform::from_axis_angle(Vec3::UnitZ(), 5.0 * std::numbers::pi / 180.0, Vec3::Zero());
  RigidTransform est = gt;
  est.rotation = rz.rotation * gt.rotation;
  e = registration_errors(est, gt);
  CHECK(std::abs(e.rre_deg - 5.0) < 1e-6);
  CHECK(std::abs(registration_errors(gt, est).rre_deg - e.rre_deg) < 1e-9);

  EvalConfig cfg;
  CHECK_FALSE(registration_succeeded({2.1, 0.0}, cfg));
  CHECK(registration_succeeded({1.9, 4.9}, cfg));
  CHECK_FALSE(registration_succeeded({0.1, 5.1}, cfg));

  // Triangle inequality for translation errors through an intermediate estimate.
  RigidTransform mid = gt;
  mid.translation += Vec3(0.3, -0.2, 0.1);
  RigidTransform far = gt;
  far.translation += Vec3(-0.5, 0.4, 0.9);
  CHECK(registration_errors(far, gt).rte <=
        registration_errors(far, mid).rte + registration_errors(mid, gt).rte + 1e-12);
}

namespace {

EvalSettings small_settings() {
  EvalSettings s;
  s.detect.m = 64;
  s.detect.cluster.k = 16;
  s.eval.keypoint_counts = {32, 64, 128};
  s.eval.registration_keypoints = 64;
  return s;
}

}  // namespace

TEST_CASE("evaluate corpus on identical clones") {
  const auto scene = synth_scene(5, 1500, SceneKind::kStructured);
  const Model model = Model::create({});
  const auto loader = [&](std::size_t i) {
    return EvalPair{"clone" + std::to_string(i), scene.source, scene.source, RigidTransform::identity()};
  };
  const auto report = evaluate_corpus(3, loader, model, small_settings());
  REQUIRE(report.counts == std::vector<std::size_t>{32, 64});
  for (std::size_t s = 0; s < report.counts.size(); ++s) {
    CHECK(report.repeatability(s).mean == 1.0);
    CHECK(report.repeatability(s).std == 0.0);
    CHECK(report.precision(s).mean == 1.0);
  }
  CHECK(report.success_rate() == 1.0);
}

TEST_CASE("evaluate corpus aggregates, skips and writes reports") {
  const Model model = Model::create({});
  const auto loader = [&](std::size_t i) {
    if (i == 1) throw DataError("missing scan");
    const auto s = synth_scene(10 + i, 1500, SceneKind::kStructured);
    return EvalPair{"p" + std::to_string(i), s.source, s.target, s.gt};
  };
  const auto settings = small_settings();
  const auto report = evaluate_corpus(3, loader, model, settings);
  CHECK(report.pairs.size() == 2);
  CHECK(report.skipped == std::vector<std::string>{"1"});

  // Single pair: aggregates equal its metrics.
  const auto single = evaluate_corpus(1, loader, model, settings);
  CHECK(single.repeatability(0).mean == single.pairs[0].repeatability[0]);
  CHECK(single.repeatability(0).std == 0.0);
  CHECK(single.aggregate([](const PairMetrics& p) { return p.rte; }).mean == single.pairs[0].rte);

  // Aggregate means equal the mean of the emitted CSV rows.
  std::istringstream csv(report.pairs_csv());
  std::string line;
  std::getline(csv, line);
  CHECK(line == "pair,rep_32,rep_64,prec_32,prec_64,rand_rep_32,rand_rep_64,rte,rre,success,"
                "inlier_ratio,iterations");
  double sum = 0.0;
  int rows = 0;
  while (std::getline(csv, line)) {
    std::istringstream fields(line);
    std::string cell;
    std::getline(fields, cell, ',');
    std::getline(fields, cell, ',');
    sum += std::stod(cell);
    ++rows;
  }
  CHECK(rows == 2);
  CHECK(report.repeatability(0).mean == doctest::Approx(sum / rows).epsilon(1e-15));

  const auto again = evaluate_corpus(3, loader, model, settings);
  CHECK(again.report_json() == report.report_json());
  CHECK(again.pairs_csv() == report.pairs_csv());

  const auto j = nlohmann::json::parse(report.report_json());
  CHECK(j["schema_version"] == MetricsReport::kSchemaVersion);
  CHECK(j["pairs_skipped"] == 1);

  const auto dir = std::filesystem::temp_directory_path() / "rskdd_eval_test";
  std::filesystem::remove_all(dir);
  report.write(dir);
  CHECK(std::filesystem::exists(dir / "report.json"));
  CHECK(std::filesystem::exists(dir / "pairs.csv"));
  CHECK(std::filesystem::exists(dir / "timings.csv"));
  std::filesystem::remove_all(dir);

  CHECK_THROWS_AS(evaluate_corpus(0, loader, model, settings), ConfigError);
}
