#include "rskdd/training.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "rskdd/errors.hpp"

namespace rskdd {
namespace {

// Fixed partition of clusters for gradient accumulation; the reduction order
// does not depend on the thread count.
constexpr std::size_t kGradBlocks = 8;

double grad_norm(const Model& g) {
  double sq = 0.0;
  for (const auto* mlp : g.parts()) {
    for (const auto& l : mlp->layers) sq += l.weight.squaredNorm() + l.bias.squaredNorm();
  }
  return std::sqrt(sq);
}

// Finite and representable in the f32 checkpoint format.
bool fits_f32(const Model& m) {
  constexpr double kMax = std::numeric_limits<float>::max();
  for (const auto* mlp : m.parts()) {
    for (const auto& l : mlp->layers) {
      if (!(l.weight.cwiseAbs().maxCoeff() < kMax) || !(l.bias.cwiseAbs().maxCoeff() < kMax)) {
        return false;
      }
    }
  }
  return true;
}

}  // namespace

FrameForward forward_frame(const Model& model, const PointCloud& cloud, const DetectConfig& config,
                           bool with_descriptors) {
  if (cloud.channel_width() != model.config.channels) {
    throw ConfigError("forward_frame: cloud channel width does not match the model");
  }
  const KdTree index(cloud);
  std::vector<Cluster> clusters = build_clusters(cloud, index, config);
  const std::size_t m = clusters.size();

  FrameForward f;
  f.detector_tapes.resize(m);
  std::vector<ClusterKeypoint> outs(m);
  if (with_descriptors) {
    f.descriptor_tapes.resize(m);
    f.descriptors.values.resize(static_cast<Eigen::Index>(m), model.config.descriptor_width());
  }
  const auto n = static_cast<std::int64_t>(m);
#if defined(RSKDD_HAVE_OPENMP)
#pragma omp parallel for schedule(static)
#endif
  for (std::int64_t i = 0; i < n; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    outs[idx] = detect_cluster(model, clusters[idx], &f.detector_tapes[idx]);
    if (with_descriptors) {
      f.descriptors.values.row(i) = describe_cluster(model, clusters[idx].features,
                                                     outs[idx].attentive_map, &f.descriptor_tapes[idx]);
    }
  }
  for (std::size_t i = 0; i < m; ++i) f.keypoints.push_back(clusters[i], std::move(outs[i]), i);
  return f;
}

void backward_frame(const Model& model, const FrameForward& frame, const RowMatrix& grad_keypoints,
                    const Eigen::VectorXd& grad_sigmas, const RowMatrix* grad_descriptors,
                    Model& grads, bool detector_grads) {
  const std::size_t m = frame.keypoints.size();
  if (static_cast<std::size_t>(grad_keypoints.rows()) != m ||
      static_cast<std::size_t>(grad_sigmas.size()) != m) {
    throw ConfigError("backward_frame: gradient shape mismatch");
  }
  if (grad_descriptors != nullptr && frame.descriptor_tapes.size() != m) {
    throw ConfigError("backward_frame: frame was run without descriptors");
  }

  const std::size_t blocks = std::min(kGradBlocks, std::max<std::size_t>(m, 1));
  std::vector<Model> partial(blocks, grads.zeros_like());
  const auto nb = static_cast<std::int64_t>(blocks);
#if defined(RSKDD_HAVE_OPENMP)
#pragma omp parallel for schedule(static)
#endif
  for (std::int64_t b = 0; b < nb; ++b) {
    const std::size_t begin = m * static_cast<std::size_t>(b) / blocks;
    const std::size_t end = m * static_cast<std::size_t>(b + 1) / blocks;
    Model& g = partial[static_cast<std::size_t>(b)];
    for (std::size_t i = begin; i < end; ++i) {
      const auto row = static_cast<Eigen::Index>(i);
      ClusterKeypointGrad up;
      up.keypoint = grad_keypoints.row(row).transpose();
      up.sigma = grad_sigmas(row);
      if (grad_descriptors != nullptr) {
        up.attentive_map = describe_cluster_backward(
            model, frame.descriptor_tapes[i], frame.descriptors.values.row(row),
            grad_descriptors->row(row), g);
      }
      if (!detector_grads) continue;
      ClusterKeypoint out;
      out.weights = frame.keypoints.weights[i];
      detect_cluster_backward(model, frame.keypoints.clusters[i], frame.detector_tapes[i], out, up, g);
    }
  }
  for (const auto& g : partial) grads.add_scaled(g, 1.0);
}

std::string loss_log_csv(const std::vector<LossRecord>& log) {
  std::ostringstream os;
  os.precision(10);
  os << "step,stage,epoch,chamfer,p2p,matching,total\n";
  for (const auto& r : log) {
    os << r.step << ',' << r.stage << ',' << r.epoch << ',' << r.chamfer << ',' << r.p2p << ','
       << r.matching << ',' << r.total << '\n';
  }
  return os.str();
}

PairLoss pair_loss(const Model& model, const EvalPair& pair, int stage, const LossConfig& loss,
                   const DetectConfig& detect, std::uint64_t seed, bool keep_detector_loss,
                   bool detector_grads) {
  const bool with_desc = stage == 2;
  const bool detector_terms = stage == 1 || keep_detector_loss;

  DetectConfig cs = detect;
  cs.seed = derive_seed(seed, 0);
  DetectConfig ct = detect;
  ct.seed = derive_seed(seed, 1);
  const FrameForward fs = forward_frame(model, pair.source, cs, with_desc);
  const FrameForward ft = forward_frame(model, pair.target, ct, with_desc);

  PairBatch batch;
  batch.src_keypoints = to_matrix(fs.keypoints.keypoints);
  batch.tgt_keypoints = to_matrix(ft.keypoints.keypoints);
  batch.src_sigmas = Eigen::Map<const Eigen::VectorXd>(fs.keypoints.sigmas.data(),
                                                       static_cast<Eigen::Index>(fs.keypoints.size()));
  batch.tgt_sigmas = Eigen::Map<const Eigen::VectorXd>(ft.keypoints.sigmas.data(),
                                                       static_cast<Eigen::Index>(ft.keypoints.size()));
  batch.gt = pair.gt;
  if (with_desc) {
    batch.src_descriptors = fs.descriptors.values;
    batch.tgt_descriptors = ft.descriptors.values;
  }

  PairLoss out;
  out.terms.stage = stage;
  PairBatchGrad g = PairBatchGrad::zeros_like(batch);

  if (detector_terms) {
    PairBatchGrad gc;
    out.terms.chamfer = probabilistic_chamfer_loss(batch, &gc);
    RowMatrix gps;
    RowMatrix gpt;
    out.terms.p2p = point_to_point_loss(batch.src_keypoints, KdTree(pair.source), &gps) +
                    point_to_point_loss(batch.tgt_keypoints, KdTree(pair.target), &gpt);
    g.src_keypoints += gc.src_keypoints + loss.lambda_p2p * gps;
    g.tgt_keypoints += gc.tgt_keypoints + loss.lambda_p2p * gpt;
    g.src_sigmas += gc.src_sigmas;
    g.tgt_sigmas += gc.tgt_sigmas;
    out.terms.total += out.terms.chamfer + loss.lambda_p2p * out.terms.p2p;
  }
  if (with_desc) {
    PairBatchGrad gm;
    out.terms.matching = matching_loss(batch, loss.matching, &gm);
    g.src_keypoints += gm.src_keypoints;
    g.tgt_keypoints += gm.tgt_keypoints;
    g.src_sigmas += gm.src_sigmas;
    g.tgt_sigmas += gm.tgt_sigmas;
    g.src_descriptors += gm.src_descriptors;
    g.tgt_descriptors += gm.tgt_descriptors;
    out.terms.total += out.terms.matching;
  }

  out.grads = model.zeros_like();
  if (std::isfinite(out.terms.total)) {
    backward_frame(model, fs, g.src_keypoints, g.src_sigmas, with_desc ? &g.src_descriptors : nullptr,
                   out.grads, detector_grads);
    backward_frame(model, ft, g.tgt_keypoints, g.tgt_sigmas, with_desc ? &g.tgt_descriptors : nullptr,
                   out.grads, detector_grads);
  }
  return out;
}

namespace {

TrainResult run_stage(int stage, std::size_t pair_count, const PairLoader& pairs, const Model& init,
                      const TrainOptions& opt) {
  const TrainSchedule& sch = opt.schedule;
  sch.validate();
  if (pair_count == 0) throw ConfigError("training: empty pair corpus");
  const int epochs = stage == 1 ? sch.stage1_epochs : sch.stage2_epochs;
  const bool detector_trainable = stage == 1 || !sch.freeze_detector;

  TrainResult res;
  res.model = init;
  res.model.round_to_float();
  Model velocity = init.zeros_like();
  Model last_good = res.model;

  std::vector<EvalPair> cache;  // loader results are reused across epochs
  cache.reserve(pair_count);
  for (std::size_t i = 0; i < pair_count; ++i) cache.push_back(pairs(i));

  std::mt19937_64 order_rng(derive_seed(sch.seed, static_cast<std::uint64_t>(stage)));
  std::vector<std::size_t> order(pair_count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t step = 0;

  for (int epoch = 0; epoch < epochs && !res.aborted; ++epoch) {
    std::shuffle(order.begin(), order.end(), order_rng);
    double epoch_sum = 0.0;
    Model accum = res.model.zeros_like();
    std::size_t in_batch = 0;

    for (std::size_t k = 0; k < order.size(); ++k) {
      const std::size_t idx = order[k];
      const std::uint64_t seed =
          derive_seed(sch.seed, (static_cast<std::uint64_t>(stage) << 48) ^
                                    (static_cast<std::uint64_t>(epoch) << 24) ^ idx);
      PairLoss pl;
      try {
        pl = pair_loss(res.model, cache[idx], stage, opt.loss, opt.detect, seed,
                       sch.stage2_keep_detector_loss, detector_trainable);
      } catch (const NumericalError& e) {
        spdlog::warn("training stage {}: {}", stage, e.what());
        pl.terms.stage = stage;
        pl.terms.total = std::numeric_limits<double>::quiet_NaN();
      }
      pl.terms.step = step++;
      pl.terms.epoch = epoch;
      res.log.push_back(pl.terms);
      if (!std::isfinite(pl.terms.total) || !pl.grads.all_finite()) {
        res.aborted = true;
        res.abort_reason = "non-finite loss at step " + std::to_string(pl.terms.step);
        spdlog::error("training stage {}: {}", stage, res.abort_reason);
        res.model = last_good;
        break;
      }
      epoch_sum += pl.terms.total;
      accum.add_scaled(pl.grads, 1.0 / static_cast<double>(sch.batch_pairs));
      ++in_batch;

      if (in_batch == sch.batch_pairs || k + 1 == order.size()) {
        if (sch.grad_clip > 0.0) {
          const double norm = grad_norm(accum);
          if (norm > sch.grad_clip) {
            for (auto* p : accum.parts()) {
              for (auto& l : p->layers) {
                l.weight *= sch.grad_clip / norm;
                l.bias *= sch.grad_clip / norm;
              }
            }
          }
        }
        if (!detector_trainable) {
          for (auto* p : accum.detector_parts()) p->set_zero();
        }
        sgd_step(res.model, accum, velocity, sch.learning_rate, sch.momentum);
        if (!detector_trainable) {
          // Momentum buffers stay zero, so frozen parameters do not move.
          auto frozen = res.model.detector_parts();
          auto orig = last_good.detector_parts();
          for (std::size_t i = 0; i < frozen.size(); ++i) *frozen[i] = *orig[i];
        }
        if (!fits_f32(res.model)) {
          res.aborted = true;
          res.abort_reason = "non-finite parameters after step " + std::to_string(pl.terms.step);
          spdlog::error("training stage {}: {}", stage, res.abort_reason);
          res.model = last_good;
          break;
        }
        last_good = res.model;
        accum.set_zero();
        in_batch = 0;
      }
    }
    if (res.aborted) break;
    res.epoch_means.push_back(epoch_sum / static_cast<double>(pair_count));
    spdlog::info("stage {} epoch {}: mean loss {:.6f}", stage, epoch, res.epoch_means.back());
    if (opt.on_epoch) {
      Model snapshot = res.model;
      snapshot.round_to_float();
      opt.on_epoch(stage, epoch, snapshot);
    }
  }
  res.model.round_to_float();
  return res;
}

}  // namespace

TrainResult train_stage1(std::size_t pair_count, const PairLoader& pairs, const Model& init,
                         const TrainOptions& options) {
  return run_stage(1, pair_count, pairs, init, options);
}

TrainResult train_stage2(std::size_t pair_count, const PairLoader& pairs, const Model& stage1,
                         const TrainOptions& options) {
  return run_stage(2, pair_count, pairs, stage1, options);
}

}  // namespace rskdd
