#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rskdd/model.hpp"
#include "rskdd/spatial.hpp"

namespace rskdd {

/// Preprocessing: voxel filter, normals/curvature, fixed-size random sample.
struct PreprocessConfig {
  double voxel_grid = 0.1;
  int k_normal = 16;
  std::size_t n_points = 16384;
  std::uint64_t seed = 1;
};

/// Detection settings shared by training, evaluation and the CLI.
struct DetectConfig {
  std::size_t m = 512;  // candidate clusters
  ClusterParams cluster;
  std::uint64_t seed = 11;
};

struct MatchingConfig {
  double temperature = 0.1;
  double sigma_max = 1.0;
  bool use_weights = true;

  void validate() const;
};

struct LossConfig {
  MatchingConfig matching;
  double lambda_p2p = 1.0;
};

struct RansacConfig {
  double confidence = 0.99;
  std::size_t max_iterations = 10000;
  double inlier_threshold = 1.0;
  std::size_t sample_size = 3;
  bool mutual_filter = false;
  std::uint64_t seed = 5;

  void validate() const;
};

struct EvalConfig {
  double eps_r = 0.5;
  double eps_p = 1.0;
  double rte_max = 2.0;
  double rre_max_deg = 5.0;
  std::vector<std::size_t> keypoint_counts{128, 256, 512};
  /// Keypoints fed to RANSAC (selected by lowest sigma).
  std::size_t registration_keypoints = 512;

  void validate() const;
};

struct TrainSchedule {
  int stage1_epochs = 20;
  int stage2_epochs = 20;
  std::size_t batch_pairs = 1;  // gradient accumulation over this many pairs
  double learning_rate = 0.01;
  double momentum = 0.9;
  double grad_clip = 1.0;       // max global gradient norm, 0 disables
  std::uint64_t seed = 3;
  int checkpoint_every = 0;     // epochs, 0 = only final
  bool freeze_detector = false;
  bool stage2_keep_detector_loss = false;

  void validate() const;
};

struct SynthConfig {
  std::size_t pairs = 50;
  std::size_t n_points = 4096;
  double jitter = 0.01;
  double overlap = 0.7;
  double max_rotation_deg = 30.0;
  double max_translation = 5.0;
  double half_extent = 10.0;
  std::uint64_t seed = 2024;
};

/// Everything a run needs; serialized verbatim as config.resolved.
struct RunConfig {
  std::string name = "default";
  std::string output_root = "runs";
  std::string manifest;          // sequence manifest (JSON), empty for synthetic data
  std::string cache_dir;
  std::string checkpoint;
  int threads = 1;
  bool deterministic = true;
  PreprocessConfig preprocess;
  DetectConfig detect;
  ModelConfig model;
  LossConfig loss;
  RansacConfig ransac;
  EvalConfig eval;
  TrainSchedule train;
  SynthConfig synth;
  int train_stride = 10;
  int test_window = 5;

  void validate() const;
};

}  // namespace rskdd
