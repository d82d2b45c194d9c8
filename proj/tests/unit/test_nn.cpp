#include <doctest.h>

#include "rskdd/errors.hpp"
#include "rskdd/nn.hpp"
#include "test_util.hpp"

using namespace rskdd;
using namespace rskdd::nn;
using rskdd::test::fd_max_rel_error;
using rskdd::test::random_matrix;

namespace {

// Scalar probe loss: sum of out .* probe, so d/d(out) = probe.
double probe_loss(const RowMatrix& out, const RowMatrix& probe) {
  return (out.array() * probe.array()).sum();
}

}  // namespace

TEST_CASE("identity layer passes rows through") {
  std::mt19937_64 rng(1);
  const RowMatrix x = random_matrix(5, 4, rng);
  CHECK(forward(Mlp::identity(4), x) == x);
}

TEST_CASE("shared mlp matches a naive dense oracle and shares weights") {
  std::mt19937_64 rng(2);
  const Mlp mlp = Mlp::create(6, {8, 5}, Activation::kIdentity, rng);
  RowMatrix x = random_matrix(7, 6, rng);
  x.row(3) = x.row(1);
  const RowMatrix y = forward(mlp, x);
  CHECK(y.row(3) == y.row(1));
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    std::vector<double> h(8);
    for (int o = 0; o < 8; ++o) {
      double s = mlp.layers[0].bias(o);
      for (int i = 0; i < 6; ++i) s += mlp.layers[0].weight(o, i) * x(r, i);
      h[static_cast<std::size_t>(o)] = std::max(s, 0.0);
    }
    for (int o = 0; o < 5; ++o) {
      double s = mlp.layers[1].bias(o);
      for (int i = 0; i < 8; ++i) s += mlp.layers[1].weight(o, i) * h[static_cast<std::size_t>(i)];
      CHECK(std::abs(s - y(r, o)) < 1e-12);
    }
  }
  CHECK_THROWS_AS(forward(mlp, random_matrix(2, 5, rng)), ConfigError);
}

TEST_CASE("shared mlp is row permutation equivariant and col max invariant") {
  std::mt19937_64 rng(3);
  const Mlp mlp = Mlp::create(4, {16, 8}, Activation::kRelu, rng);
  const RowMatrix x = random_matrix(10, 4, rng);
  Eigen::PermutationMatrix<Eigen::Dynamic> p(10);
  p.setIdentity();
  std::shuffle(p.indices().data(), p.indices().data() + 10, rng);
  const RowMatrix xp = p * x;
  const RowMatrix y = forward(mlp, x);
  CHECK((forward(mlp, xp) - p * y).norm() < 1e-12);
  CHECK((col_max(forward(mlp, xp)) - col_max(y)).norm() == 0.0);
}

TEST_CASE("initialization is reproducible per seed") {
  std::mt19937_64 a(9);
  std::mt19937_64 b(9);
  const Mlp m1 = Mlp::create(8, {64, 64, 64}, Activation::kRelu, a);
  const Mlp m2 = Mlp::create(8, {64, 64, 64}, Activation::kRelu, b);
  CHECK(m1.parameter_count() == 8 * 64 + 64 + 2 * (64 * 64 + 64));
  for (std::size_t i = 0; i < m1.layers.size(); ++i) CHECK(m1.layers[i].weight == m2.layers[i].weight);
}

TEST_CASE("softmax examples") {
  const auto u = softmax(Eigen::Vector4d::Constant(3.0));
  for (int i = 0; i < 4; ++i) CHECK(u(i) == doctest::Approx(0.25));
  const auto big = softmax(Eigen::Vector2d(1000.0, 0.0));
  CHECK(big.allFinite());
  CHECK(big(0) == doctest::Approx(1.0));
  const auto s = softmax(Eigen::Vector3d(1.0, 2.0, 3.0));
  CHECK(std::abs(s(0) - 0.09003) < 1e-5);
  CHECK(std::abs(s(1) - 0.24473) < 1e-5);
  CHECK(std::abs(s(2) - 0.66524) < 1e-5);
  std::mt19937_64 rng(4);
  const Eigen::VectorXd r = random_matrix(12, 1, rng).col(0);
  const auto a = softmax(r);
  CHECK(std::abs(a.sum() - 1.0) < 1e-9);
  CHECK((softmax((r.array() + 7.5).matrix()) - a).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("softplus examples") {
  CHECK(softplus(0.0) == doctest::Approx(0.693147).epsilon(1e-6));
  CHECK(softplus(100.0) == doctest::Approx(100.0));
  CHECK(softplus(-100.0) > 0.0);
  CHECK(softplus(-100.0) == doctest::Approx(std::exp(-100.0)));
  for (double x : {-30.0, -2.0, 0.0, 0.7, 40.0}) {
    const double num = (softplus(x + 1e-5) - softplus(x - 1e-5)) / 2e-5;
    CHECK(std::abs(num - softplus_grad(x)) < 1e-8);
  }
}

TEST_CASE("backward of an identity layer sums inputs") {
  std::mt19937_64 rng(5);
  const Mlp mlp = Mlp::identity(3);
  const RowMatrix x = random_matrix(6, 3, rng);
  MlpTape tape;
  forward(mlp, x, &tape);
  Mlp grads = mlp.zeros_like();
  backward(mlp, tape, RowMatrix::Ones(6, 3), grads);
  for (int o = 0; o < 3; ++o) {
    for (int i = 0; i < 3; ++i) CHECK(grads.layers[0].weight(o, i) == doctest::Approx(x.col(i).sum()));
    CHECK(grads.layers[0].bias(o) == doctest::Approx(6.0));
  }
  Mlp zero = mlp.zeros_like();
  backward(mlp, tape, RowMatrix::Zero(6, 3), zero);
  CHECK(zero.layers[0].weight.isZero(0.0));
  MlpTape empty;
  CHECK_THROWS_AS(backward(mlp, empty, RowMatrix::Zero(6, 3), zero), ConfigError);
}

TEST_CASE("mlp gradients match finite differences") {
  std::mt19937_64 rng(6);
  Mlp mlp = Mlp::create(5, {7, 6, 4}, Activation::kRelu, rng);
  RowMatrix x = random_matrix(9, 5, rng);
  const RowMatrix probe = random_matrix(9, 4, rng);
  MlpTape tape;
  forward(mlp, x, &tape);
  Mlp grads = mlp.zeros_like();
  const RowMatrix gx = backward(mlp, tape, probe, grads);
  const auto f = [&] { return probe_loss(forward(mlp, x), probe); };
  CHECK(fd_max_rel_error(x, gx, f) < 1e-4);
  for (std::size_t i = 0; i < mlp.layers.size(); ++i) {
    CHECK(fd_max_rel_error(mlp.layers[i].weight, grads.layers[i].weight, f) < 1e-4);
    RowMatrix b = mlp.layers[i].bias;
    const RowMatrix gb = grads.layers[i].bias;
    const auto fb = [&] {
      mlp.layers[i].bias = b.row(0);
      return f();
    };
    CHECK(fd_max_rel_error(b, gb, fb) < 1e-4);
    mlp.layers[i].bias = b.row(0);
  }
}

TEST_CASE("softmax and col max gradients match finite differences") {
  std::mt19937_64 rng(7);
  Eigen::VectorXd s = random_matrix(6, 1, rng).col(0);
  const Eigen::VectorXd probe = random_matrix(6, 1, rng).col(0);
  const Eigen::VectorXd g = softmax_backward(softmax(s), probe);
  CHECK(fd_max_rel_error(s, g, [&] { return softmax(s).dot(probe); }) < 1e-4);

  RowMatrix m = random_matrix(8, 5, rng);
  const Eigen::RowVectorXd pr = random_matrix(1, 5, rng).row(0);
  std::vector<Eigen::Index> arg;
  col_max(m, &arg);
  RowMatrix gm = RowMatrix::Zero(8, 5);
  for (Eigen::Index c = 0; c < 5; ++c) gm(arg[static_cast<std::size_t>(c)], c) = pr(c);
  CHECK(fd_max_rel_error(m, gm, [&] { return col_max(m).dot(pr); }) < 1e-4);
}

TEST_CASE("sgd step") {
  Mlp p = Mlp::identity(1);
  p.layers[0].weight(0, 0) = 1.0;
  Mlp v = p.zeros_like();
  Mlp g = p.zeros_like();
  g.layers[0].weight(0, 0) = 1.0;  // d/dx of x^2 / 2 at x = 1
  sgd_step(p, g, v, 0.1, 0.0);
  CHECK(p.layers[0].weight(0, 0) == doctest::Approx(0.9));

  // Momentum on a convex quadratic: the loss settles and decreases after burn-in.
  double x = 1.0;
  double vel = 0.0;
  std::vector<double> losses;
  for (int i = 0; i < 100; ++i) {
    Mlp px = Mlp::identity(1);
    px.layers[0].weight(0, 0) = x;
    Mlp gx = px.zeros_like();
    gx.layers[0].weight(0, 0) = x;
    Mlp vx = px.zeros_like();
    vx.layers[0].weight(0, 0) = vel;
    sgd_step(px, gx, vx, 0.01, 0.5);
    x = px.layers[0].weight(0, 0);
    vel = vx.layers[0].weight(0, 0);
    losses.push_back(0.5 * x * x);
  }
  for (std::size_t i = 10; i < losses.size(); ++i) CHECK(losses[i] <= losses[i - 1]);

  Mlp bad = Mlp::identity(2);
  CHECK_THROWS_AS(sgd_step(p, bad, v, 0.1, 0.9), ConfigError);
}
