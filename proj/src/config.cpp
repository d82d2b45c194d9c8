#include "rskdd/config.hpp"

#include <fstream>
#include <sstream>

#include "rskdd/errors.hpp"

namespace rskdd {

NLOHMANN_JSON_SERIALIZE_ENUM(AttentionHead, {{AttentionHead::kChannelMax, "channel_max"},
                                             {AttentionHead::kLinear, "linear"}})
NLOHMANN_JSON_SERIALIZE_ENUM(DilationMode, {{DilationMode::kRandom, "random"},
                                            {DilationMode::kStride, "dpc"}})

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(PreprocessConfig, voxel_grid, k_normal, n_points, seed)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ClusterParams, k, alpha_d, mode)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DetectConfig, m, cluster, seed)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(MatchingConfig, temperature, sigma_max, use_weights)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(LossConfig, matching, lambda_p2p)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(RansacConfig, confidence, max_iterations,
                                                inlier_threshold, sample_size, mutual_filter, seed)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(EvalConfig, eps_r, eps_p, rte_max, rre_max_deg,
                                                keypoint_counts, registration_keypoints)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainSchedule, stage1_epochs, stage2_epochs,
                                                batch_pairs, learning_rate, momentum, grad_clip,
                                                seed, checkpoint_every, freeze_detector,
                                                stage2_keep_detector_loss)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SynthConfig, pairs, n_points, jitter, overlap,
                                                max_rotation_deg, max_translation, half_extent, seed)

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"channels", c.channels},
                     {"detector_widths", c.detector_widths},
                     {"saliency_widths", c.saliency_widths},
                     {"point_widths", c.point_widths},
                     {"fuse_widths", c.fuse_widths},
                     {"attention_head", c.attention_head},
                     {"use_attentive_map", c.use_attentive_map},
                     {"l2_normalize", c.l2_normalize},
                     {"init_seed", c.init_seed}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  const ModelConfig d;
  c.channels = j.value("channels", d.channels);
  c.detector_widths = j.value("detector_widths", d.detector_widths);
  c.saliency_widths = j.value("saliency_widths", d.saliency_widths);
  c.point_widths = j.value("point_widths", d.point_widths);
  c.fuse_widths = j.value("fuse_widths", d.fuse_widths);
  c.attention_head = j.value("attention_head", d.attention_head);
  c.use_attentive_map = j.value("use_attentive_map", d.use_attentive_map);
  c.l2_normalize = j.value("l2_normalize", d.l2_normalize);
  c.init_seed = j.value("init_seed", d.init_seed);
}

void to_json(nlohmann::json& j, const RunConfig& c) {
  j = nlohmann::json{{"name", c.name},
                     {"output_root", c.output_root},
                     {"manifest", c.manifest},
                     {"cache_dir", c.cache_dir},
                     {"checkpoint", c.checkpoint},
                     {"threads", c.threads},
                     {"deterministic", c.deterministic},
                     {"preprocess", c.preprocess},
                     {"detect", c.detect},
                     {"model", c.model},
                     {"loss", c.loss},
                     {"ransac", c.ransac},
                     {"eval", c.eval},
                     {"train", c.train},
                     {"synth", c.synth},
                     {"train_stride", c.train_stride},
                     {"test_window", c.test_window}};
}

namespace {

// Every key of `given` must exist in `known` (recursively for objects).
void reject_unknown(const nlohmann::json& given, const nlohmann::json& known, const std::string& path) {
  for (auto it = given.begin(); it != given.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!known.contains(it.key())) throw ConfigError("config: unknown key '" + key + "'");
    if (it->is_object() && known.at(it.key()).is_object()) {
      reject_unknown(*it, known.at(it.key()), key);
    }
  }
}

}  // namespace

void from_json(const nlohmann::json& j, RunConfig& c) {
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  const RunConfig d;
  reject_unknown(j, nlohmann::json(d), "");
  try {
    c.name = j.value("name", d.name);
    c.output_root = j.value("output_root", d.output_root);
    c.manifest = j.value("manifest", d.manifest);
    c.cache_dir = j.value("cache_dir", d.cache_dir);
    c.checkpoint = j.value("checkpoint", d.checkpoint);
    c.threads = j.value("threads", d.threads);
    c.deterministic = j.value("deterministic", d.deterministic);
    c.preprocess = j.value("preprocess", d.preprocess);
    c.detect = j.value("detect", d.detect);
    c.model = j.value("model", d.model);
    c.loss = j.value("loss", d.loss);
    c.ransac = j.value("ransac", d.ransac);
    c.eval = j.value("eval", d.eval);
    c.train = j.value("train", d.train);
    c.synth = j.value("synth", d.synth);
    c.train_stride = j.value("train_stride", d.train_stride);
    c.test_window = j.value("test_window", d.test_window);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

void TrainSchedule::validate() const {
  if (stage1_epochs < 0 || stage2_epochs < 0) throw ConfigError("train: epochs must be >= 0");
  if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be > 0");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("train: momentum must be in [0,1)");
  if (batch_pairs == 0) throw ConfigError("train: batch_pairs must be >= 1");
}

void RunConfig::validate() const {
  if (threads < 1) throw ConfigError("config: threads must be >= 1");
  if (preprocess.voxel_grid <= 0.0) throw ConfigError("config: preprocess.voxel_grid must be > 0");
  if (detect.m == 0 || detect.cluster.k == 0 || detect.cluster.alpha_d == 0) {
    throw ConfigError("config: detect.m, detect.cluster.k and alpha_d must be >= 1");
  }
  if (train_stride < 1) throw ConfigError("config: train_stride must be >= 1");
  if (test_window < 0) throw ConfigError("config: test_window must be >= 0");
  model.validate();
  loss.matching.validate();
  ransac.validate();
  eval.validate();
  train.validate();
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in, nullptr, true, true);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  RunConfig c = j.get<RunConfig>();
  c.validate();
  return c;
}

void apply_override(RunConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' is not of the form key=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(raw);
  } catch (const nlohmann::json::exception&) {
    value = raw;
  }
  nlohmann::json j = config;
  nlohmann::json::json_pointer ptr("/" + [&] {
    std::string p = key;
    std::replace(p.begin(), p.end(), '.', '/');
    return p;
  }());
  if (!j.contains(ptr)) throw ConfigError("config: unknown key '" + key + "'");
  j[ptr] = value;
  config = j.get<RunConfig>();
  config.validate();
}

std::string dump_config(const RunConfig& config) { return nlohmann::json(config).dump(2) + "\n"; }

}  // namespace rskdd
