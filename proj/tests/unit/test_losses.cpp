#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "rskdd/errors.hpp"
#include "rskdd/losses.hpp"
#include "test_util.hpp"

using namespace rskdd;
using rskdd::test::fd_max_rel_error;
using rskdd::test::random_matrix;

namespace {

PairBatch random_batch(Eigen::Index m, Eigen::Index d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  PairBatch b;
  b.src_keypoints = random_matrix(m, 3, rng, 2.0);
  b.tgt_keypoints = random_matrix(m, 3, rng, 2.0);
  std::uniform_real_distribution<double> u(0.1, 0.9);
  b.src_sigmas.resize(m);
  b.tgt_sigmas.resize(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    b.src_sigmas(i) = u(rng);
    b.tgt_sigmas(i) = u(rng);
  }
  b.src_descriptors = random_matrix(m, d, rng);
  b.tgt_descriptors = random_matrix(m, d, rng);
  b.gt = RigidTransform::from_axis_angle(Vec3(0.2, -0.4, 1.0), 0.3, Vec3(0.5, -1.0, 0.2));
  return b;
}

}  // namespace

TEST_CASE("soft_assign symmetric case gives the midpoint") {
  RowMatrix q(1, 2);
  q << 0.0, 0.0;
  RowMatrix t(2, 2);
  t << 1.0, 0.0, 0.0, 1.0;  // both at squared distance 1
  RowMatrix kp(2, 3);
  kp << 0.0, 0.0, 0.0, 2.0, 4.0, 6.0;
  const auto sa = soft_assign(q, t, kp, 0.1);
  CHECK(sa.scores(0, 0) == doctest::Approx(0.5));
  CHECK(sa.scores(0, 1) == doctest::Approx(0.5));
  CHECK((sa.soft_points.row(0) - RowMatrix(kp.colwise().mean())).norm() < 1e-12);
}

TEST_CASE("soft_assign rows are distributions and entropy grows with temperature") {
  std::mt19937_64 rng(4);
  const RowMatrix q = random_matrix(16, 8, rng);
  const RowMatrix t = random_matrix(16, 8, rng);
  const RowMatrix kp = random_matrix(16, 3, rng);
  std::vector<double> prev(16, -1.0);
  for (double temp : {0.01, 0.05, 0.1, 0.5, 1.0, 5.0}) {
    const auto sa = soft_assign(q, t, kp, temp);
    for (Eigen::Index i = 0; i < 16; ++i) {
      CHECK(std::abs(sa.scores.row(i).sum() - 1.0) < 1e-9);
      CHECK(sa.scores.row(i).minCoeff() >= 0.0);
      double h = 0.0;
      for (Eigen::Index j = 0; j < 16; ++j) {
        const double s = sa.scores(i, j);
        if (s > 0.0) h -= s * std::log(s);
      }
      CHECK(h >= prev[static_cast<std::size_t>(i)] - 1e-12);
      prev[static_cast<std::size_t>(i)] = h;
    }
  }
}

TEST_CASE("soft_assign degenerates to nearest neighbor at low temperature") {
  // Reciprocal logits only sharpen when the 1/d gaps dominate t, so the
  // descriptors are kept at unit-scale distances.
  std::mt19937_64 rng(8);
  const RowMatrix q = random_matrix(64, 16, rng, 0.05);
  const RowMatrix t = random_matrix(64, 16, rng, 0.05);
  const RowMatrix kp = random_matrix(64, 3, rng, 5.0);
  const auto sa = soft_assign(q, t, kp, 1e-3);
  for (Eigen::Index i = 0; i < 64; ++i) {
    Eigen::Index best = 0;
    (t.rowwise() - q.row(i)).rowwise().squaredNorm().minCoeff(&best);
    Eigen::Index arg = 0;
    sa.scores.row(i).maxCoeff(&arg);
    CHECK(arg == best);
    CHECK((sa.soft_points.row(i) - kp.row(best)).norm() < 1e-3);
  }
}

TEST_CASE("soft_assign clamps identical descriptors") {
  RowMatrix q(1, 2);
  q << 1.0, 1.0;
  RowMatrix t(2, 2);
  t << 1.0, 1.0, 3.0, 3.0;
  RowMatrix kp(2, 3);
  kp << 1.0, 2.0, 3.0, -1.0, -2.0, -3.0;
  const auto sa = soft_assign(q, t, kp, 0.1);
  CHECK(sa.scores.allFinite());
  CHECK(sa.scores(0, 0) == doctest::Approx(1.0));
  CHECK_THROWS_AS(soft_assign(q, t, kp, 0.0), ConfigError);
}

TEST_CASE("keypoint weights") {
  Eigen::VectorXd s(2);
  s << 0.5, 1.5;
  const auto w = keypoint_weights(s, 1.0);
  CHECK(w(0) == doctest::Approx(2.0));
  CHECK(w(1) == 0.0);

  const auto u = keypoint_weights(Eigen::VectorXd::Constant(5, 0.3), 1.0);
  for (Eigen::Index i = 0; i < 5; ++i) CHECK(u(i) == doctest::Approx(1.0));

  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> d(0.0, 1.5);
  Eigen::VectorXd r(40);
  for (auto& v : r) v = d(rng);
  CHECK(keypoint_weights(r, 1.0).sum() == doctest::Approx(40.0).epsilon(1e-12));

  bool fallback = false;
  const auto f = keypoint_weights(Eigen::VectorXd::Constant(3, 2.0), 1.0, &fallback);
  CHECK(fallback);
  CHECK(f.isApprox(Eigen::VectorXd::Ones(3)));
}

TEST_CASE("matching loss is zero for perfect correspondence") {
  std::mt19937_64 rng(3);
  PairBatch b;
  b.gt = RigidTransform::from_axis_angle(Vec3::UnitZ(), 0.5, Vec3(1.0, 2.0, 0.0));
  b.src_keypoints = random_matrix(6, 3, rng, 3.0);
  b.tgt_keypoints.resize(6, 3);
  for (Eigen::Index i = 0; i < 6; ++i) {
    b.tgt_keypoints.row(i) = b.gt.apply(b.src_keypoints.row(i).transpose()).transpose();
  }
  b.src_sigmas = Eigen::VectorXd::Constant(6, 0.5);
  b.tgt_sigmas = b.src_sigmas;
  b.src_descriptors = 10.0 * RowMatrix::Identity(6, 6);
  b.tgt_descriptors = b.src_descriptors;
  MatchingConfig cfg;
  cfg.temperature = 1e-3;
  CHECK(matching_loss(b, cfg) < 1e-9);
  CHECK(matching_loss(random_batch(6, 4, 1), MatchingConfig{}) > 0.0);
}

TEST_CASE("matching loss rejects an invalid transform") {
  PairBatch b = random_batch(4, 3, 2);
  b.gt.rotation(0, 0) = 2.0;
  CHECK_THROWS_AS(matching_loss(b, MatchingConfig{}), ConfigError);
}

TEST_CASE("matching loss gradients match finite differences") {
  for (bool weights : {true, false}) {
    PairBatch b = random_batch(7, 5, 11);
    MatchingConfig cfg;
    cfg.temperature = 0.5;
    cfg.use_weights = weights;
    PairBatchGrad g;
    matching_loss(b, cfg, &g);
    const auto f = [&] { return matching_loss(b, cfg); };
    CHECK(fd_max_rel_error(b.src_descriptors, g.src_descriptors, f) < 1e-4);
    CHECK(fd_max_rel_error(b.tgt_descriptors, g.tgt_descriptors, f) < 1e-4);
    CHECK(fd_max_rel_error(b.src_keypoints, g.src_keypoints, f) < 1e-4);
    CHECK(fd_max_rel_error(b.tgt_keypoints, g.tgt_keypoints, f) < 1e-4);
    CHECK(fd_max_rel_error(b.src_sigmas, g.src_sigmas, f) < 1e-4);
    CHECK(fd_max_rel_error(b.tgt_sigmas, g.tgt_sigmas, f) < 1e-4);
  }
}

TEST_CASE("matching loss permutation argmin survives a saliency shift") {
  // Three keypoints; every assignment of target descriptors is tried and the
  // best permutation must not change when all saliencies shift together.
  PairBatch b;
  b.gt = RigidTransform::identity();
  b.src_keypoints.resize(3, 3);
  b.src_keypoints << 0, 0, 0, 3, 0, 0, 0, 4, 0;
  b.tgt_keypoints = b.src_keypoints;
  b.src_sigmas = Eigen::Vector3d(0.1, 0.3, 0.2);
  b.tgt_sigmas = Eigen::Vector3d(0.2, 0.1, 0.4);
  b.src_descriptors = 3.0 * RowMatrix::Identity(3, 3);
  MatchingConfig cfg;
  cfg.temperature = 0.05;
  const auto best_perm = [&](double shift) {
    PairBatch c = b;
    c.src_sigmas.array() += shift;
    c.tgt_sigmas.array() += shift;
    std::vector<int> perm{0, 1, 2};
    std::vector<int> best;
    double best_loss = 1e300;
    do {
      c.tgt_descriptors = b.src_descriptors;
      for (int i = 0; i < 3; ++i) c.tgt_descriptors.row(i) = b.src_descriptors.row(perm[i]);
      const double l = matching_loss(c, cfg);
      if (l < best_loss) {
        best_loss = l;
        best = perm;
      }
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
  };
  const auto base = best_perm(0.0);
  CHECK(base == std::vector<int>{0, 1, 2});
  CHECK(best_perm(0.4) == base);
}

TEST_CASE("chamfer loss basics") {
  PairBatch b = random_batch(5, 2, 7);
  b.gt = RigidTransform::identity();
  b.tgt_keypoints = b.src_keypoints;
  b.src_sigmas.setOnes();
  b.tgt_sigmas.setOnes();
  CHECK(std::abs(probabilistic_chamfer_loss(b)) < 1e-12);

  // Moving the target away increases the loss at fixed sigma.
  double prev = probabilistic_chamfer_loss(b);
  for (int step = 1; step <= 5; ++step) {
    PairBatch c = b;
    c.tgt_keypoints.col(0).array() += 0.5 * step;
    const double l = probabilistic_chamfer_loss(c);
    CHECK(l > prev);
    prev = l;
  }
}

TEST_CASE("chamfer saliency converges to the nearest distance") {
  PairBatch b;
  b.gt = RigidTransform::identity();
  b.src_keypoints = RowMatrix::Zero(1, 3);
  b.tgt_keypoints = RowMatrix::Zero(1, 3);
  b.tgt_keypoints(0, 0) = 0.8;
  b.src_sigmas = Eigen::VectorXd::Constant(1, 3.0);
  b.tgt_sigmas = Eigen::VectorXd::Constant(1, 3.0);
  for (int it = 0; it < 5000; ++it) {
    PairBatchGrad g;
    probabilistic_chamfer_loss(b, &g);
    b.src_sigmas -= 0.05 * g.src_sigmas;
    b.tgt_sigmas -= 0.05 * g.tgt_sigmas;
  }
  const double sigma = 0.5 * (b.src_sigmas(0) + b.tgt_sigmas(0));
  CHECK(std::abs(sigma - 0.8) < 0.008);
}

TEST_CASE("chamfer gradients match finite differences") {
  PairBatch b = random_batch(9, 2, 21);
  PairBatchGrad g;
  probabilistic_chamfer_loss(b, &g);
  const auto f = [&] { return probabilistic_chamfer_loss(b); };
  CHECK(fd_max_rel_error(b.src_keypoints, g.src_keypoints, f) < 1e-4);
  CHECK(fd_max_rel_error(b.tgt_keypoints, g.tgt_keypoints, f) < 1e-4);
  CHECK(fd_max_rel_error(b.src_sigmas, g.src_sigmas, f) < 1e-4);
  CHECK(fd_max_rel_error(b.tgt_sigmas, g.tgt_sigmas, f) < 1e-4);
}

TEST_CASE("point to point loss") {
  const KdTree one(std::vector<Vec3>{Vec3(0, 0, 0)});
  RowMatrix kp(1, 3);
  kp << 2.0, 0.0, 0.0;
  CHECK(point_to_point_loss(kp, one) == doctest::Approx(4.0));

  std::mt19937_64 rng(5);
  const auto cloud = rskdd::test::random_points(300, rng);
  const KdTree tree(cloud);
  RowMatrix on(3, 3);
  for (int i = 0; i < 3; ++i) on.row(i) = cloud[static_cast<std::size_t>(10 * i)].transpose();
  CHECK(point_to_point_loss(on, tree) == 0.0);

  RowMatrix q = random_matrix(20, 3, rng, 3.0);
  RowMatrix g;
  point_to_point_loss(q, tree, &g);
  CHECK(fd_max_rel_error(q, g, [&] { return point_to_point_loss(q, tree); }) < 1e-4);
}
