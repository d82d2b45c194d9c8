#include "rskdd/model.hpp"

#include <fstream>
#include <sstream>

#include "binary_io.hpp"
#include "rskdd/config.hpp"
#include "rskdd/errors.hpp"

namespace rskdd {
namespace {

constexpr std::string_view kCheckpointMagic = "RSKDDCKP";

}  // namespace

void ModelConfig::validate() const {
  if (channels < 0) throw ConfigError("model: channels must be >= 0");
  if (detector_widths.empty() || saliency_widths.empty() || point_widths.empty() ||
      fuse_widths.empty()) {
    throw ConfigError("model: every MLP needs at least one layer");
  }
  if (saliency_widths.back() != 1) throw ConfigError("model: saliency head must end in width 1");
}

Model Model::create(const ModelConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.init_seed);
  using nn::Activation;
  Model m;
  m.config = config;
  m.detector = nn::Mlp::create(config.cluster_width(), config.detector_widths, Activation::kRelu, rng);
  m.attention = nn::Mlp::create(config.attentive_width(), {1}, Activation::kIdentity, rng);
  m.saliency = nn::Mlp::create(config.attentive_width(), config.saliency_widths,
                               Activation::kIdentity, rng);
  m.point_features =
      nn::Mlp::create(config.cluster_width(), config.point_widths, Activation::kRelu, rng);
  const int fused = 2 * config.global_width() + config.attentive_width();
  m.fuse = nn::Mlp::create(fused, config.fuse_widths, Activation::kIdentity, rng);
  // Checkpoints hold f32, so start from f32-representable values.
  m.round_to_float();
  return m;
}

std::array<nn::Mlp*, 5> Model::parts() {
  return {&detector, &attention, &saliency, &point_features, &fuse};
}

std::array<const nn::Mlp*, 5> Model::parts() const {
  return {&detector, &attention, &saliency, &point_features, &fuse};
}

std::array<nn::Mlp*, 3> Model::detector_parts() { return {&detector, &attention, &saliency}; }

Model Model::zeros_like() const {
  Model out = *this;
  out.set_zero();
  return out;
}

void Model::set_zero() {
  for (auto* p : parts()) p->set_zero();
}

void Model::add_scaled(const Model& other, double scale) {
  auto mine = parts();
  auto theirs = other.parts();
  for (std::size_t i = 0; i < mine.size(); ++i) mine[i]->add_scaled(*theirs[i], scale);
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : parts()) n += p->parameter_count();
  return n;
}

bool Model::all_finite() const {
  for (const auto* p : parts()) {
    if (!p->all_finite()) return false;
  }
  return true;
}

void Model::round_to_float() {
  for (auto* p : parts()) nn::round_to_float(*p);
}

void sgd_step(Model& params, const Model& grads, Model& velocity, double lr, double momentum) {
  auto p = params.parts();
  auto g = grads.parts();
  auto v = velocity.parts();
  for (std::size_t i = 0; i < p.size(); ++i) nn::sgd_step(*p[i], *g[i], *v[i], lr, momentum);
}

std::string serialize_checkpoint(const Model& model, const std::string& extra_json) {
  nlohmann::json echo;
  echo["model"] = model.config;
  echo["extra"] = nlohmann::json::parse(extra_json);
  const std::string text = echo.dump();

  std::string out(kCheckpointMagic);
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  const auto parts = model.parts();
  detail::put_u32(out, static_cast<std::uint32_t>(parts.size()));
  for (const auto* mlp : parts) {
    detail::put_u32(out, static_cast<std::uint32_t>(mlp->layers.size()));
    for (const auto& layer : mlp->layers) {
      detail::put_u32(out, static_cast<std::uint32_t>(layer.weight.rows()));
      detail::put_u32(out, static_cast<std::uint32_t>(layer.weight.cols()));
      for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
        for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) {
          detail::put_f32(out, static_cast<float>(layer.weight(r, c)));
        }
      }
      for (Eigen::Index r = 0; r < layer.bias.size(); ++r) {
        detail::put_f32(out, static_cast<float>(layer.bias(r)));
      }
    }
  }
  return out;
}

Model deserialize_checkpoint(const std::string& bytes, std::string* extra_json) {
  detail::ByteReader in(bytes);
  if (in.take(kCheckpointMagic.size()) != kCheckpointMagic) {
    throw DataError("checkpoint: bad magic");
  }
  const std::uint32_t version = in.u32();
  if (version != kCheckpointVersion) {
    throw DataError("checkpoint: unsupported version " + std::to_string(version));
  }
  const std::uint32_t text_len = in.u32();
  nlohmann::json echo;
  try {
    echo = nlohmann::json::parse(in.take(text_len));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: bad config echo: ") + e.what());
  }
  Model model = Model::create(echo.at("model").get<ModelConfig>());
  if (extra_json != nullptr) *extra_json = echo.value("extra", nlohmann::json::object()).dump();

  auto parts = model.parts();
  if (in.u32() != parts.size()) throw DataError("checkpoint: part count mismatch");
  for (auto* mlp : parts) {
    if (in.u32() != mlp->layers.size()) throw DataError("checkpoint: layer count mismatch");
    for (auto& layer : mlp->layers) {
      const std::uint32_t rows = in.u32();
      const std::uint32_t cols = in.u32();
      if (rows != layer.weight.rows() || cols != layer.weight.cols()) {
        throw DataError("checkpoint: layer shape does not match config echo");
      }
      for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
        for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) layer.weight(r, c) = in.f32();
      }
      for (Eigen::Index r = 0; r < layer.bias.size(); ++r) layer.bias(r) = in.f32();
    }
  }
  if (!in.done()) throw DataError("checkpoint: trailing bytes");
  return model;
}

void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const std::string& extra_json) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  const std::string bytes = serialize_checkpoint(model, extra_json);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Model load_checkpoint(const std::filesystem::path& path, std::string* extra_json) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint not found: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize_checkpoint(buf.str(), extra_json);
}

}  // namespace rskdd
