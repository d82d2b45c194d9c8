#pragma once

#include <functional>
#include <string>
#include <vector>

#include "rskdd/descriptor.hpp"
#include "rskdd/evaluation.hpp"
#include "rskdd/losses.hpp"
#include "rskdd/settings.hpp"

namespace rskdd {

/// Detector (and optionally descriptor) forward pass over one cloud, with
/// every tape needed for backward.
struct FrameForward {
  KeypointSet keypoints;
  std::vector<DetectorTape> detector_tapes;
  DescriptorSet descriptors;
  std::vector<DescriptorTape> descriptor_tapes;
};

FrameForward forward_frame(const Model& model, const PointCloud& cloud, const DetectConfig& config,
                           bool with_descriptors);

/// Upstream gradients w.r.t. keypoints (M x 3), saliencies and, when the
/// frame carries descriptors, descriptors (M x d). Parameter gradients are
/// accumulated into grads in cluster-index order.
void backward_frame(const Model& model, const FrameForward& frame, const RowMatrix& grad_keypoints,
                    const Eigen::VectorXd& grad_sigmas, const RowMatrix* grad_descriptors,
                    Model& grads, bool detector_grads = true);

struct LossRecord {
  std::size_t step = 0;
  int stage = 0;
  int epoch = 0;
  double chamfer = 0.0;
  double p2p = 0.0;
  double matching = 0.0;
  double total = 0.0;
};

/// "step,stage,epoch,chamfer,p2p,matching,total" rows.
std::string loss_log_csv(const std::vector<LossRecord>& log);

struct PairLoss {
  LossRecord terms;
  Model grads;
};

/// Loss and parameter gradients for one training pair. Stage 1 uses
/// chamfer + lambda * (p2p_src + p2p_tgt); stage 2 the matching loss (plus
/// the stage-1 terms when requested).
PairLoss pair_loss(const Model& model, const EvalPair& pair, int stage, const LossConfig& loss,
                   const DetectConfig& detect, std::uint64_t seed, bool keep_detector_loss,
                   bool detector_grads = true);

struct TrainResult {
  Model model;                 // rounded to f32, identical to the saved checkpoint
  std::vector<LossRecord> log;
  std::vector<double> epoch_means;  // mean total loss per epoch, in run order
  bool aborted = false;
  std::string abort_reason;
};

struct TrainOptions {
  DetectConfig detect;
  LossConfig loss;
  TrainSchedule schedule;
  /// Called after each epoch with (stage, epoch, model).
  std::function<void(int, int, const Model&)> on_epoch;
};

/// Detector training with chamfer and point-to-point losses.
TrainResult train_stage1(std::size_t pair_count, const PairLoader& pairs, const Model& init,
                         const TrainOptions& options);

/// Descriptor training with the matching loss; the detector is fine-tuned
/// unless schedule.freeze_detector is set.
TrainResult train_stage2(std::size_t pair_count, const PairLoader& pairs, const Model& stage1,
                         const TrainOptions& options);

}  // namespace rskdd
