#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rskdd/nn.hpp"

namespace rskdd {

enum class AttentionHead {
  kChannelMax,  ///< score_k = max over the C_a features of neighbor k
  kLinear,      ///< score_k = a . f_k + b
};

/// Network layout. Every width is configurable; defaults are desk-scale.
struct ModelConfig {
  int channels = channel::kDefaultWidth;           // C
  std::vector<int> detector_widths{64, 64, 64};     // last = C_a
  std::vector<int> saliency_widths{64, 1};
  std::vector<int> point_widths{64, 64};            // last = C_f
  std::vector<int> fuse_widths{128, 128};           // last = d
  AttentionHead attention_head = AttentionHead::kChannelMax;
  bool use_attentive_map = true;
  bool l2_normalize = false;
  std::uint64_t init_seed = 7;

  int cluster_width() const { return 4 + channels; }
  int attentive_width() const { return detector_widths.back(); }
  int global_width() const { return point_widths.back(); }
  int descriptor_width() const { return fuse_widths.back(); }

  /// Throws ConfigError on empty layouts or a saliency head not ending in 1.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Detector and descriptor parameters. The same type doubles as a gradient
/// or velocity buffer via zeros_like().
struct Model {
  ModelConfig config;
  nn::Mlp detector;        // F^i -> F_hat^i (K x C_a)
  nn::Mlp attention;       // C_a -> 1, used only by the linear head
  nn::Mlp saliency;        // f_tilde -> pre-softplus sigma
  nn::Mlp point_features;  // F^i -> per-point features (K x C_f)
  nn::Mlp fuse;            // [point | global | attentive] -> K x d

  static Model create(const ModelConfig& config);

  Model zeros_like() const;
  void set_zero();
  void add_scaled(const Model& other, double scale);
  std::size_t parameter_count() const;
  bool all_finite() const;
  void round_to_float();

  std::array<nn::Mlp*, 5> parts();
  std::array<const nn::Mlp*, 5> parts() const;
  std::array<nn::Mlp*, 3> detector_parts();
};

/// Momentum SGD over every part of the model.
void sgd_step(Model& params, const Model& grads, Model& velocity, double lr, double momentum);

/// Binary checkpoint: "RSKDDCKP", u32 version, u32 length + JSON config echo,
/// u32 part count, then per part u32 layer count and per layer u32 rows,
/// u32 cols, row-major f32 weights, f32 biases. Little-endian throughout.
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string serialize_checkpoint(const Model& model, const std::string& extra_json = "{}");
Model deserialize_checkpoint(const std::string& bytes, std::string* extra_json = nullptr);
void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const std::string& extra_json = "{}");
/// Throws DataError on a missing or malformed file.
Model load_checkpoint(const std::filesystem::path& path, std::string* extra_json = nullptr);

}  // namespace rskdd
