#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <random>
#include <vector>

#include "rskdd/pc_core.hpp"

namespace rskdd::nn {

enum class Activation { kIdentity, kRelu };

struct Layer {
  RowMatrix weight;           // out x in
  Eigen::RowVectorXd bias;    // out
};

/// Shared MLP applied independently to every row of its input.
struct Mlp {
  std::vector<Layer> layers;
  Activation hidden = Activation::kRelu;
  Activation output = Activation::kRelu;

  /// He-uniform weights scaled by fan-in, zero biases.
  static Mlp create(int input_width, const std::vector<int>& widths, Activation output,
                    std::mt19937_64& rng);
  /// Single linear layer with identity weights and zero bias.
  static Mlp identity(int width);

  int input_width() const;
  int output_width() const;
  std::size_t parameter_count() const;

  /// Same shapes, all zeros. Used for gradient and velocity buffers.
  Mlp zeros_like() const;
  void set_zero();
  void add_scaled(const Mlp& other, double scale);
  bool same_shape(const Mlp& other) const;
  bool all_finite() const;
};

/// Values recorded by forward() and consumed by backward().
struct MlpTape {
  std::vector<RowMatrix> inputs;
  std::vector<RowMatrix> pre_activations;
  bool recorded() const { return !inputs.empty(); }
  void clear() {
    inputs.clear();
    pre_activations.clear();
  }
};

/// Throws ConfigError when rows.cols() != input width.
RowMatrix forward(const Mlp& mlp, const RowMatrix& rows, MlpTape* tape = nullptr);

/// Accumulates parameter gradients into grads and returns d(loss)/d(rows).
/// Throws ConfigError if the tape was never recorded.
RowMatrix backward(const Mlp& mlp, const MlpTape& tape, const RowMatrix& grad_out, Mlp& grads);

/// Max-subtracted softmax.
Eigen::VectorXd softmax(const Eigen::VectorXd& scores);
/// Gradient w.r.t. scores given the softmax output and the upstream gradient.
Eigen::VectorXd softmax_backward(const Eigen::VectorXd& probs, const Eigen::VectorXd& grad_probs);

/// ln(1 + e^x), overflow safe.
double softplus(double x);
/// d softplus / dx = logistic(x).
double softplus_grad(double x);

/// Per-row maximum over columns; argmax written when requested.
Eigen::VectorXd row_max(const RowMatrix& m, std::vector<Eigen::Index>* argmax = nullptr);
/// Per-column maximum over rows; argmax written when requested.
Eigen::RowVectorXd col_max(const RowMatrix& m, std::vector<Eigen::Index>* argmax = nullptr);

/// Momentum SGD: v <- momentum * v + grad; param <- param - lr * v.
void sgd_step(Mlp& params, const Mlp& grads, Mlp& velocity, double lr, double momentum);

/// Rounds every parameter to the nearest 32-bit float.
void round_to_float(Mlp& mlp);

}  // namespace rskdd::nn
