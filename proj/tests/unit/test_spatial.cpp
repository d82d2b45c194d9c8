#include <doctest.h>

#include <algorithm>
#include <set>

#include "rskdd/errors.hpp"
#include "rskdd/spatial.hpp"
#include "test_util.hpp"

using namespace rskdd;
using rskdd::test::random_cloud;
using rskdd::test::random_points;

namespace {

std::vector<Neighbor> brute_knn(const std::vector<Vec3>& pts, const Vec3& q, std::size_t k) {
  std::vector<Neighbor> all;
  for (std::size_t i = 0; i < pts.size(); ++i) all.push_back({i, (pts[i] - q).squaredNorm()});
  std::sort(all.begin(), all.end(), [](const Neighbor& a, const Neighbor& b) {
    return a.distance_sq != b.distance_sq ? a.distance_sq < b.distance_sq : a.index < b.index;
  });
  all.resize(std::min(k, all.size()));
  return all;
}

}  // namespace

TEST_CASE("kd-tree basics") {
  const KdTree one(std::vector<Vec3>{Vec3(1, 2, 3)});
  const auto n = one.knn(Vec3(1, 2, 3), 1);
  REQUIRE(n.size() == 1);
  CHECK(n[0].index == 0);
  CHECK(n[0].distance_sq == 0.0);
  CHECK(one.knn(Vec3::Zero(), 5).size() == 1);
  CHECK_THROWS_AS(KdTree(std::vector<Vec3>{}), ConfigError);

  std::mt19937_64 rng(1);
  const auto pts = random_points(100, rng);
  const KdTree tree(pts);
  const auto self = tree.knn(pts[17], 3);
  CHECK(self[0].index == 17);
  CHECK(self[0].distance_sq == 0.0);
}

TEST_CASE("kd-tree matches exhaustive search") {
  std::mt19937_64 rng(2);
  for (std::size_t n : {100u, 777u, 2000u}) {
    auto pts = random_points(n, rng);
    // Duplicates exercise the index tie-break.
    for (std::size_t i = 0; i < 20; ++i) pts[i + 20] = pts[i];
    const KdTree tree(pts);
    for (int q = 0; q < 100; ++q) {
      const Vec3 query = q < 50 ? pts[static_cast<std::size_t>(q)] : random_points(1, rng, 6.0)[0];
      for (std::size_t k : {1u, 10u, 64u}) {
        const auto got = tree.knn(query, k);
        const auto want = brute_knn(pts, query, k);
        REQUIRE(got.size() == want.size());
        for (std::size_t i = 0; i < got.size(); ++i) {
          CHECK(got[i].index == want[i].index);
          CHECK(got[i].distance_sq == want[i].distance_sq);
        }
      }
    }
  }
}

TEST_CASE("random candidate sampling") {
  const auto perm = random_sample_candidates(50, 50, 3);
  std::set<std::size_t> s(perm.begin(), perm.end());
  CHECK(s.size() == 50);
  CHECK(*s.rbegin() == 49);
  CHECK(random_sample_candidates(1000, 20, 9) == random_sample_candidates(1000, 20, 9));
  CHECK_THROWS_AS(random_sample_candidates(5, 6, 1), ConfigError);

  // Per-index inclusion frequency p = 0.1 over 10000 trials, within 3 sigma.
  std::vector<int> hits(100, 0);
  for (std::uint64_t t = 0; t < 10000; ++t) {
    const auto pick = random_sample_candidates(100, 10, derive_seed(77, t));
    CHECK(std::set<std::size_t>(pick.begin(), pick.end()).size() == 10);
    for (auto i : pick) ++hits[i];
  }
  const double sigma = std::sqrt(10000 * 0.1 * 0.9);
  for (int h : hits) CHECK(std::abs(h - 1000.0) < 3.0 * sigma + 1.0);
}

TEST_CASE("random dilation clusters") {
  std::mt19937_64 rng(4);
  const PointCloud cloud = random_cloud(800, 4, rng);
  const KdTree tree(cloud);
  const std::size_t center = 11;

  // alpha_d = 1 is plain kNN for any seed.
  const ClusterParams plain{24, 1, DilationMode::kRandom};
  const auto c1 = random_dilation_cluster(tree, cloud, center, plain, 1);
  const auto c2 = random_dilation_cluster(tree, cloud, center, plain, 2);
  std::vector<std::size_t> knn;
  for (const auto& n : brute_knn(cloud.positions(), cloud.position(center), 24)) knn.push_back(n.index);
  std::sort(knn.begin(), knn.end());
  auto s1 = c1.neighbor_indices;
  auto s2 = c2.neighbor_indices;
  std::sort(s1.begin(), s1.end());
  std::sort(s2.begin(), s2.end());
  CHECK(s1 == knn);
  CHECK(s2 == knn);

  const ClusterParams dil{24, 2, DilationMode::kRandom};
  const auto d = random_dilation_cluster(tree, cloud, center, dil, 5);
  CHECK(d.size() == 24);
  CHECK(std::set<std::size_t>(d.neighbor_indices.begin(), d.neighbor_indices.end()).size() == 24);
  CHECK(d.features.rows() == 24);
  CHECK(d.features.cols() == 8);
  for (Eigen::Index r = 0; r < 24; ++r) {
    const Vec3 rel = cloud.position(d.neighbor_indices[static_cast<std::size_t>(r)]) - d.center;
    CHECK((d.features.row(r).head<3>().transpose() - rel).norm() == 0.0);
    CHECK(std::abs(d.features(r, 3) - rel.norm()) < 1e-9);
    CHECK(rel.norm() <= d.pool_radius + 1e-12);
    CHECK(d.features.row(r).tail<4>() ==
          cloud.channels().row(static_cast<Eigen::Index>(d.neighbor_indices[static_cast<std::size_t>(r)])));
  }
  CHECK(random_dilation_cluster(tree, cloud, center, dil, 5).neighbor_indices == d.neighbor_indices);

  const ClusterParams stride{24, 2, DilationMode::kStride};
  const auto st = random_dilation_cluster(tree, cloud, center, stride, 5);
  const auto pool = brute_knn(cloud.positions(), cloud.position(center), 48);
  for (std::size_t i = 0; i < 24; ++i) CHECK(st.neighbor_indices[i] == pool[2 * i].index);
}

TEST_CASE("pool radius grows with the dilation ratio") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const PointCloud cloud = random_cloud(300, 0, rng);
    const KdTree tree(cloud);
    const std::size_t center = static_cast<std::size_t>(trial) % cloud.size();
    const auto sorted = brute_knn(cloud.positions(), cloud.position(center), 300);
    double prev = 0.0;
    for (std::size_t a : {1u, 2u, 3u}) {
      const auto c = random_dilation_cluster(tree, cloud, center, {16, a, DilationMode::kRandom}, 1);
      CHECK(c.pool_radius == doctest::Approx(std::sqrt(sorted[16 * a - 1].distance_sq)));
      CHECK(c.pool_radius >= prev);
      prev = c.pool_radius;
    }
  }
}

TEST_CASE("small clouds truncate the pool") {
  std::mt19937_64 rng(6);
  const PointCloud cloud = random_cloud(10, 4, rng);
  const KdTree tree(cloud);
  const auto c = random_dilation_cluster(tree, cloud, 0, {8, 2, DilationMode::kRandom}, 1);
  CHECK(c.pool_truncated);
  CHECK(c.size() == 8);
  const auto padded = random_dilation_cluster(tree, cloud, 0, {16, 2, DilationMode::kRandom}, 1);
  CHECK(padded.size() == 16);
  CHECK_THROWS_AS(random_dilation_cluster(tree, cloud, 0, {0, 2, DilationMode::kRandom}, 1), ConfigError);
}
