#include "rskdd/nn.hpp"

#include <cmath>

#include "rskdd/errors.hpp"

namespace rskdd::nn {
namespace {

void activate(RowMatrix& m, Activation act) {
  if (act == Activation::kRelu) m = m.cwiseMax(0.0);
}

Activation layer_activation(const Mlp& mlp, std::size_t layer) {
  return layer + 1 == mlp.layers.size() ? mlp.output : mlp.hidden;
}

}  // namespace

Mlp Mlp::create(int input_width, const std::vector<int>& widths, Activation output,
                std::mt19937_64& rng) {
  if (input_width <= 0 || widths.empty()) throw ConfigError("Mlp::create: empty layout");
  Mlp mlp;
  mlp.output = output;
  int in = input_width;
  for (int out : widths) {
    if (out <= 0) throw ConfigError("Mlp::create: layer width must be positive");
    const double bound = std::sqrt(6.0 / static_cast<double>(in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Layer layer;
    layer.weight.resize(out, in);
    for (Eigen::Index r = 0; r < out; ++r) {
      for (Eigen::Index c = 0; c < in; ++c) layer.weight(r, c) = dist(rng);
    }
    layer.bias = Eigen::RowVectorXd::Zero(out);
    mlp.layers.push_back(std::move(layer));
    in = out;
  }
  return mlp;
}

Mlp Mlp::identity(int width) {
  Mlp mlp;
  mlp.output = Activation::kIdentity;
  mlp.layers.push_back(Layer{RowMatrix::Identity(width, width), Eigen::RowVectorXd::Zero(width)});
  return mlp;
}

int Mlp::input_width() const {
  return layers.empty() ? 0 : static_cast<int>(layers.front().weight.cols());
}

int Mlp::output_width() const {
  return layers.empty() ? 0 : static_cast<int>(layers.back().weight.rows());
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

Mlp Mlp::zeros_like() const {
  Mlp out = *this;
  out.set_zero();
  return out;
}

void Mlp::set_zero() {
  for (auto& l : layers) {
    l.weight.setZero();
    l.bias.setZero();
  }
}

void Mlp::add_scaled(const Mlp& other, double scale) {
  if (!same_shape(other)) throw ConfigError("Mlp::add_scaled: shape mismatch");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    layers[i].weight += scale * other.layers[i].weight;
    layers[i].bias += scale * other.layers[i].bias;
  }
}

bool Mlp::same_shape(const Mlp& other) const {
  if (layers.size() != other.layers.size()) return false;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].weight.rows() != other.layers[i].weight.rows() ||
        layers[i].weight.cols() != other.layers[i].weight.cols() ||
        layers[i].bias.size() != other.layers[i].bias.size()) {
      return false;
    }
  }
  return true;
}

bool Mlp::all_finite() const {
  for (const auto& l : layers) {
    if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
  }
  return true;
}

RowMatrix forward(const Mlp& mlp, const RowMatrix& rows, MlpTape* tape) {
  if (mlp.layers.empty()) throw ConfigError("nn::forward: empty MLP");
  if (rows.cols() != mlp.input_width()) {
    throw ConfigError("nn::forward: input width " + std::to_string(rows.cols()) +
                      " does not match layer width " + std::to_string(mlp.input_width()));
  }
  if (tape != nullptr) tape->clear();
  RowMatrix x = rows;
  for (std::size_t i = 0; i < mlp.layers.size(); ++i) {
    const Layer& layer = mlp.layers[i];
    RowMatrix z = x * layer.weight.transpose();
    z.rowwise() += layer.bias;
    if (tape != nullptr) {
      tape->inputs.push_back(std::move(x));
      tape->pre_activations.push_back(z);
    }
    activate(z, layer_activation(mlp, i));
    x = std::move(z);
  }
  return x;
}

RowMatrix backward(const Mlp& mlp, const MlpTape& tape, const RowMatrix& grad_out, Mlp& grads) {
  if (!tape.recorded() || tape.inputs.size() != mlp.layers.size()) {
    throw ConfigError("nn::backward: no recorded forward pass");
  }
  if (!grads.same_shape(mlp)) throw ConfigError("nn::backward: gradient buffer shape mismatch");
  RowMatrix g = grad_out;
  for (std::size_t i = mlp.layers.size(); i-- > 0;) {
    if (layer_activation(mlp, i) == Activation::kRelu) {
      g = (tape.pre_activations[i].array() > 0.0).select(g, 0.0);
    }
    grads.layers[i].weight.noalias() += g.transpose() * tape.inputs[i];
    grads.layers[i].bias += g.colwise().sum();
    g = g * mlp.layers[i].weight;
  }
  return g;
}

Eigen::VectorXd softmax(const Eigen::VectorXd& scores) {
  const double top = scores.maxCoeff();
  Eigen::VectorXd e = (scores.array() - top).exp();
  return e / e.sum();
}

Eigen::VectorXd softmax_backward(const Eigen::VectorXd& probs, const Eigen::VectorXd& grad_probs) {
  const double inner = probs.dot(grad_probs);
  return probs.array() * (grad_probs.array() - inner);
}

double softplus(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

double softplus_grad(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Eigen::VectorXd row_max(const RowMatrix& m, std::vector<Eigen::Index>* argmax) {
  Eigen::VectorXd out(m.rows());
  if (argmax != nullptr) argmax->resize(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    Eigen::Index idx = 0;
    out(r) = m.row(r).maxCoeff(&idx);
    if (argmax != nullptr) (*argmax)[static_cast<std::size_t>(r)] = idx;
  }
  return out;
}

Eigen::RowVectorXd col_max(const RowMatrix& m, std::vector<Eigen::Index>* argmax) {
  Eigen::RowVectorXd out(m.cols());
  if (argmax != nullptr) argmax->assign(static_cast<std::size_t>(m.cols()), 0);
  if (m.rows() == 0) return out.setConstant(-std::numeric_limits<double>::infinity());
  out = m.row(0);
  for (Eigen::Index r = 1; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (m(r, c) > out(c)) {
        out(c) = m(r, c);
        if (argmax != nullptr) (*argmax)[static_cast<std::size_t>(c)] = r;
      }
    }
  }
  return out;
}

void sgd_step(Mlp& params, const Mlp& grads, Mlp& velocity, double lr, double momentum) {
  if (!params.same_shape(grads) || !params.same_shape(velocity)) {
    throw ConfigError("sgd_step: shape mismatch");
  }
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    auto& v = velocity.layers[i];
    const auto& g = grads.layers[i];
    v.weight = momentum * v.weight + g.weight;
    v.bias = momentum * v.bias + g.bias;
    params.layers[i].weight -= lr * v.weight;
    params.layers[i].bias -= lr * v.bias;
  }
}

void round_to_float(Mlp& mlp) {
  for (auto& l : mlp.layers) {
    l.weight = l.weight.cast<float>().cast<double>();
    l.bias = l.bias.cast<float>().cast<double>();
  }
}

}  // namespace rskdd::nn
