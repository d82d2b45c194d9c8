// Command-line front end: preprocess, detect, describe, register, eval, train, bench.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/basic_file_sink.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#ifdef RSKDD_HAVE_OPENMP
#include <omp.h>
#endif

#include "rskdd/config.hpp"
#include "rskdd/dataset_io.hpp"
#include "rskdd/dumps.hpp"
#include "rskdd/errors.hpp"
#include "rskdd/evaluation.hpp"
#include "rskdd/registration.hpp"
#include "rskdd/synth.hpp"
#include "rskdd/training.hpp"

namespace fs = std::filesystem;
using namespace rskdd;

namespace {

enum Exit : int {
  kOk = 0,
  kInternal = 1,
  kConfigExit = 2,
  kDataExit = 3,
  kNumericalExit = 4,
  kPartial = 6,
};

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string name;
  std::string output_root;
  std::string checkpoint;
  int threads = 0;
  bool fast = false;
  std::string log_level = "info";
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("-c,--config", o.config_path, "JSON run config");
  cmd->add_option("-s,--set", o.overrides, "Override a config key, e.g. detect.m=256")
      ->take_all();
  cmd->add_option("-n,--name", o.name, "Run name (runs/<name>/)");
  cmd->add_option("--output-root", o.output_root, "Parent directory of run directories");
  cmd->add_option("--checkpoint", o.checkpoint, "Model checkpoint");
  cmd->add_option("-j,--threads", o.threads, "Worker threads (ignored in deterministic mode)")
      ->check(CLI::PositiveNumber);
  cmd->add_flag("--fast", o.fast, "Disable deterministic mode and use --threads");
  cmd->add_option("--log-level", o.log_level, "trace, debug, info, warn, error")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error"}));
}

/// Resolved config, run directory and logging for one command.
class RunContext {
 public:
  RunContext(const CommonOptions& o, const std::string& command) {
    if (!o.config_path.empty()) config = load_run_config(o.config_path);
    for (const auto& s : o.overrides) apply_override(config, s);
    if (!o.name.empty()) config.name = o.name;
    if (!o.output_root.empty()) config.output_root = o.output_root;
    if (!o.checkpoint.empty()) config.checkpoint = o.checkpoint;
    if (o.fast) config.deterministic = false;
    if (o.threads > 0) config.threads = o.threads;
    config.validate();

    root = fs::path(config.output_root) / config.name;
    for (const char* sub : {"checkpoints", "reports", "logs"}) fs::create_directories(root / sub);
    write_file(root / "config.resolved", dump_config(config));

    auto console = std::make_shared<spdlog::sinks::stderr_color_sink_mt>();
    auto file = std::make_shared<spdlog::sinks::basic_file_sink_mt>(
        (root / "logs" / (command + ".log")).string(), true);
    auto logger = std::make_shared<spdlog::logger>("rskdd", spdlog::sinks_init_list{console, file});
    logger->set_level(spdlog::level::from_str(o.log_level));
    spdlog::set_default_logger(logger);

    const int threads = config.deterministic ? 1 : config.threads;
#ifdef RSKDD_HAVE_OPENMP
    omp_set_num_threads(threads);
#endif
    spdlog::info("{}: run directory {}, {} thread(s){}", command, root.string(), threads,
                 config.deterministic ? ", deterministic" : "");
  }

  fs::path reports() const { return root / "reports"; }
  fs::path checkpoints() const { return root / "checkpoints"; }
  fs::path logs() const { return root / "logs"; }

  RunConfig config;
  fs::path root;
};

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

fs::path cache_dir(const RunConfig& c, const std::string& sequence) {
  const fs::path base = c.cache_dir.empty() ? fs::path(c.output_root) / "cache" : fs::path(c.cache_dir);
  return base / sequence;
}

/// Cache file keyed by scan path, size, mtime and preprocessing settings.
fs::path cache_path(const RunConfig& c, const std::string& sequence, const fs::path& scan) {
  std::ostringstream key;
  key << fs::absolute(scan).string() << '|' << nlohmann::json(c)["preprocess"].dump();
  std::error_code ec;
  const auto size = fs::file_size(scan, ec);
  if (!ec) key << '|' << size;
  const auto mtime = fs::last_write_time(scan, ec);
  if (!ec) key << '|' << mtime.time_since_epoch().count();
  std::ostringstream name;
  name << scan.stem().string() << '_' << std::hex << std::setw(16) << std::setfill('0')
       << fnv1a(key.str()) << ".rspc";
  return cache_dir(c, sequence) / name.str();
}

/// Preprocessed cloud for one scan; reads the cache or fills it.
PointCloud cached_cloud(const RunConfig& c, const std::string& sequence, const fs::path& scan,
                        bool* hit = nullptr) {
  const fs::path p = cache_path(c, sequence, scan);
  if (fs::exists(p)) {
    if (hit != nullptr) *hit = true;
    return read_cloud(p);
  }
  if (hit != nullptr) *hit = false;
  const PointCloud cloud = preprocess(read_scan(scan), c.preprocess);
  fs::create_directories(p.parent_path());
  const fs::path tmp = p.string() + ".tmp";
  write_cloud(tmp, cloud);
  fs::rename(tmp, p);
  return cloud;
}

/// Raw .bin scans are preprocessed; .rspc files are used as is.
PointCloud load_input(const RunConfig& c, const fs::path& path) {
  if (path.extension() == ".rspc") return read_cloud(path);
  return preprocess(read_scan(path), c.preprocess);
}

enum class Split { kTrain, kTest };

struct Corpus {
  std::size_t size = 0;
  PairLoader loader;
};

Corpus make_corpus(const RunConfig& c, Split split, bool identical) {
  Corpus corpus;
  if (c.manifest.empty()) {
    const std::uint64_t base = derive_seed(c.synth.seed, split == Split::kTrain ? 0 : 1);
    const SceneOptions options = scene_options(c.synth);
    const std::size_t n = c.synth.n_points;
    const char* tag = split == Split::kTrain ? "train" : "test";
    corpus.size = c.synth.pairs;
    corpus.loader = [=](std::size_t i) {
      const auto s = synth_scene(derive_seed(base, i), n, SceneKind::kStructured, options);
      const std::string id = std::string("synth_") + tag + "_" + std::to_string(i);
      if (identical) return EvalPair{id, s.source, s.source, RigidTransform::identity()};
      return EvalPair{id, s.source, s.target, s.gt};
    };
    return corpus;
  }
  const auto manifest = std::make_shared<SequenceManifest>(load_manifest(c.manifest));
  const auto pairs = std::make_shared<std::vector<FramePair>>(
      split == Split::kTrain ? make_training_pairs(*manifest, static_cast<std::size_t>(c.train_stride))
                             : make_test_pairs(*manifest, static_cast<std::size_t>(c.test_window)));
  corpus.size = pairs->size();
  corpus.loader = [c, manifest, pairs, identical](std::size_t i) {
    const FramePair& fp = (*pairs)[i];
    const auto& seq = manifest->sequence_id;
    const PointCloud src = cached_cloud(c, seq, manifest->scans[fp.source]);
    const std::string id = seq + "_" + std::to_string(fp.source) + "_" + std::to_string(fp.target);
    if (identical) return EvalPair{id, src, src, RigidTransform::identity()};
    return EvalPair{id, src, cached_cloud(c, seq, manifest->scans[fp.target]), fp.relative};
  };
  return corpus;
}

Model load_model(const RunContext& ctx, bool random_init) {
  if (random_init) return Model::create(ctx.config.model);
  const fs::path p = ctx.config.checkpoint.empty() ? ctx.checkpoints() / "model.ckpt"
                                                   : fs::path(ctx.config.checkpoint);
  if (!fs::exists(p)) {
    throw DataError("checkpoint not found at " + p.string() +
                    " (train this run first, pass --checkpoint, or use --random-init)");
  }
  spdlog::info("loading checkpoint {}", p.string());
  return load_checkpoint(p);
}

EvalPair synthetic_pair(const RunConfig& c) {
  const auto s = synth_scene(c.synth.seed, c.synth.n_points, SceneKind::kStructured,
                             scene_options(c.synth));
  return {"synth", s.source, s.target, s.gt};
}

struct Described {
  KeypointSet keypoints;
  DescriptorSet descriptors;
};

Described detect_and_describe(const PointCloud& cloud, const Model& model, const DetectConfig& d,
                              std::size_t keep, bool with_descriptors) {
  Described out;
  out.keypoints = detect(cloud, model, d);
  if (keep > 0 && keep < out.keypoints.size()) out.keypoints = select_keypoints(out.keypoints, keep);
  if (with_descriptors) out.descriptors = describe(out.keypoints, model);
  return out;
}

// ---------------------------------------------------------------------------

int cmd_preprocess(const CommonOptions& o) {
  RunContext ctx(o, "preprocess");
  const auto& c = ctx.config;
  if (c.manifest.empty()) throw ConfigError("preprocess needs a manifest (set manifest=<file>)");
  const SequenceManifest m = load_manifest(c.manifest);
  nlohmann::json report;
  report["sequence_id"] = m.sequence_id;
  report["preprocess"] = nlohmann::json(c)["preprocess"];
  nlohmann::json frames = nlohmann::json::array();
  std::vector<std::string> skipped;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < m.scans.size(); ++i) {
    try {
      bool hit = false;
      const PointCloud cloud = cached_cloud(c, m.sequence_id, m.scans[i], &hit);
      hits += hit ? 1 : 0;
      frames.push_back({{"index", i},
                        {"scan", m.scans[i].filename().string()},
                        {"points", cloud.size()},
                        {"cache", cache_path(c, m.sequence_id, m.scans[i]).filename().string()}});
    } catch (const DataError& e) {
      spdlog::warn("skipping scan {}: {}", i, e.what());
      skipped.push_back(m.scans[i].filename().string());
    }
  }
  report["frames"] = frames;
  report["skipped"] = skipped;
  write_file(ctx.reports() / "preprocess.json", report.dump(2) + "\n");
  spdlog::info("preprocess: {} frames ready ({} from cache), {} skipped", frames.size(), hits,
               skipped.size());
  if (!skipped.empty()) return frames.empty() ? kDataExit : kPartial;
  return kOk;
}

int cmd_detect(const CommonOptions& o, const std::string& input, std::size_t keep, bool random_init,
               bool with_descriptors) {
  RunContext ctx(o, with_descriptors ? "describe" : "detect");
  const auto& c = ctx.config;
  const Model model = load_model(ctx, random_init);
  const PointCloud cloud = input.empty() ? synthetic_pair(c).source : load_input(c, input);
  const Described d = detect_and_describe(cloud, model, c.detect, keep, with_descriptors);
  write_file(ctx.reports() / "keypoints.csv", keypoints_csv(d.keypoints));
  write_file(ctx.reports() / "keypoints.bin", encode_keypoints(d.keypoints));
  if (with_descriptors) write_file(ctx.reports() / "descriptors.bin", encode_descriptors(d.descriptors));
  spdlog::info("{} keypoints written to {}", d.keypoints.size(), ctx.reports().string());
  return kOk;
}

int cmd_register(const CommonOptions& o, const std::string& source, const std::string& target,
                 bool random_init) {
  RunContext ctx(o, "register");
  const auto& c = ctx.config;
  if (source.empty() != target.empty()) throw ConfigError("register: give both --source and --target");
  const Model model = load_model(ctx, random_init);
  std::optional<RigidTransform> gt;
  EvalPair pair;
  if (source.empty()) {
    pair = synthetic_pair(c);
    gt = pair.gt;
  } else {
    pair = {"input", load_input(c, source), load_input(c, target), RigidTransform::identity()};
  }
  const std::size_t keep = c.eval.registration_keypoints;
  const Described s = detect_and_describe(pair.source, model, c.detect, keep, true);
  const Described t = detect_and_describe(pair.target, model, c.detect, keep, true);
  const auto matches = match_descriptors(s.descriptors.values, t.descriptors.values,
                                         c.ransac.mutual_filter);
  const RegistrationResult r = ransac_register(matches, s.keypoints.keypoints,
                                               t.keypoints.keypoints, c.ransac);
  nlohmann::json j = nlohmann::json::parse(r.to_json());
  j["correspondences"] = matches.size();
  if (gt) {
    const auto e = registration_errors(r.transform, *gt);
    j["rte"] = e.rte;
    j["rre_deg"] = e.rre_deg;
    j["within_thresholds"] = r.success && registration_succeeded(e, c.eval);
  }
  write_file(ctx.reports() / "registration.json", j.dump(2) + "\n");
  spdlog::info("register: success={} inlier_ratio={:.3f} iterations={}", r.success, r.inlier_ratio,
               r.iterations);
  return r.success ? kOk : kNumericalExit;
}

int cmd_eval(const CommonOptions& o, bool random_init, bool identical, const std::string& split) {
  RunContext ctx(o, "eval");
  const auto& c = ctx.config;
  const Model model = load_model(ctx, random_init);
  const Corpus corpus = make_corpus(c, split == "train" ? Split::kTrain : Split::kTest, identical);
  const EvalSettings settings{c.detect, c.ransac, c.eval};
  const MetricsReport report = evaluate_corpus(corpus.size, corpus.loader, model, settings);
  report.write(ctx.reports());
  for (std::size_t s = 0; s < report.counts.size(); ++s) {
    spdlog::info("eval: {} keypoints: repeatability {:.3f}, precision {:.3f}, random {:.3f}",
                 report.counts[s], report.repeatability(s).mean, report.precision(s).mean,
                 report.random_repeatability(s).mean);
  }
  spdlog::info("eval: success rate {:.3f} over {} pairs", report.success_rate(), report.pairs.size());
  return report.skipped.empty() ? kOk : kPartial;
}

nlohmann::json stage_summary(const TrainResult& r) {
  return {{"epoch_means", r.epoch_means},
          {"steps", r.log.size()},
          {"aborted", r.aborted},
          {"abort_reason", r.abort_reason}};
}

int cmd_train(const CommonOptions& o, int stage, const std::string& init_path) {
  RunContext ctx(o, "train");
  const auto& c = ctx.config;

  // Load every pair once; unreadable pairs are skipped.
  const Corpus corpus = make_corpus(c, Split::kTrain, false);
  std::vector<EvalPair> pairs;
  std::vector<std::string> skipped;
  for (std::size_t i = 0; i < corpus.size; ++i) {
    try {
      pairs.push_back(corpus.loader(i));
    } catch (const DataError& e) {
      spdlog::warn("skipping training pair {}: {}", i, e.what());
      skipped.push_back(std::to_string(i));
    }
  }
  if (pairs.empty()) throw DataError("train: no readable training pairs");
  const PairLoader loader = [&](std::size_t i) { return pairs[i]; };

  Model model = Model::create(c.model);
  if (!init_path.empty()) {
    model = load_checkpoint(init_path);
  } else if (stage == 2) {
    throw ConfigError("train --stage 2 needs --init <stage-1 checkpoint>");
  }

  TrainOptions opt;
  opt.detect = c.detect;
  opt.loss = c.loss;
  opt.schedule = c.train;
  opt.on_epoch = [&](int s, int epoch, const Model& m) {
    spdlog::info("train: stage {} epoch {} done", s, epoch);
    if (c.train.checkpoint_every > 0 && (epoch + 1) % c.train.checkpoint_every == 0) {
      save_checkpoint(ctx.checkpoints() /
                          ("stage" + std::to_string(s) + "_epoch" + std::to_string(epoch + 1) + ".ckpt"),
                      m, nlohmann::json{{"stage", s}, {"epoch", epoch + 1}}.dump());
    }
  };

  nlohmann::json report;
  report["pairs"] = pairs.size();
  report["skipped"] = skipped;
  std::vector<LossRecord> log;
  bool aborted = false;
  auto run = [&](int s) {
    const TrainResult r = s == 1 ? train_stage1(pairs.size(), loader, model, opt)
                                 : train_stage2(pairs.size(), loader, model, opt);
    log.insert(log.end(), r.log.begin(), r.log.end());
    report["stage" + std::to_string(s)] = stage_summary(r);
    model = r.model;
    save_checkpoint(ctx.checkpoints() / ("stage" + std::to_string(s) + ".ckpt"), model,
                    nlohmann::json{{"stage", s}}.dump());
    aborted = aborted || r.aborted;
    if (!r.epoch_means.empty()) {
      spdlog::info("train: stage {} epoch-mean loss {:.6g} -> {:.6g}", s, r.epoch_means.front(),
                   r.epoch_means.back());
    }
  };
  if (stage != 2) run(1);
  if (stage != 1 && !aborted) run(2);
  save_checkpoint(ctx.checkpoints() / "model.ckpt", model,
                  nlohmann::json{{"stage", stage == 1 ? 1 : 2}}.dump());
  write_file(ctx.logs() / "loss.csv", loss_log_csv(log));
  write_file(ctx.reports() / "train.json", report.dump(2) + "\n");
  if (aborted) return kNumericalExit;
  return skipped.empty() ? kOk : kPartial;
}

int cmd_bench(const CommonOptions& o, std::vector<std::size_t> points, std::vector<std::size_t> keypoints,
              int repeats, bool random_init) {
  RunContext ctx(o, "bench");
  const auto& c = ctx.config;
  const bool has_ckpt = !c.checkpoint.empty() || fs::exists(ctx.checkpoints() / "model.ckpt");
  const Model model = load_model(ctx, random_init || !has_ckpt);
  std::ostringstream csv;
  csv << "points,keypoints,k,detect_ms,describe_ms,total_ms\n";
  using Clock = std::chrono::steady_clock;
  for (std::size_t n : points) {
    const PointCloud cloud =
        synth_scene(c.synth.seed, n, SceneKind::kStructured, scene_options(c.synth)).source;
    for (std::size_t m : keypoints) {
      DetectConfig d = c.detect;
      d.m = m;
      std::vector<double> det_ms;
      std::vector<double> desc_ms;
      for (int r = 0; r < repeats; ++r) {
        const auto t0 = Clock::now();
        const KeypointSet set = detect(cloud, model, d);
        const auto t1 = Clock::now();
        const DescriptorSet desc = describe(set, model);
        const auto t2 = Clock::now();
        det_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
        desc_ms.push_back(std::chrono::duration<double, std::milli>(t2 - t1).count());
      }
      auto median = [](std::vector<double> v) {
        std::sort(v.begin(), v.end());
        return v[v.size() / 2];
      };
      const double a = median(det_ms);
      const double b = median(desc_ms);
      csv << n << ',' << m << ',' << d.cluster.k << ',' << a << ',' << b << ',' << a + b << '\n';
      spdlog::info("bench: N={} M={} K={}: detect {:.1f} ms, describe {:.1f} ms", n, m, d.cluster.k,
                   a, b);
    }
  }
  write_file(ctx.reports() / "bench.csv", csv.str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Random-sample keypoint detection, description and point-cloud registration"};
  app.require_subcommand(1);
  CommonOptions common;

  auto* pre = app.add_subcommand("preprocess", "Voxel filter, normals and sampling into the scan cache");
  add_common(pre, common);

  std::string input;
  std::size_t keep = 0;
  bool random_init = false;
  auto* det = app.add_subcommand("detect", "Detect keypoints in one cloud");
  auto* des = app.add_subcommand("describe", "Detect keypoints and compute descriptors");
  for (auto* cmd : {det, des}) {
    add_common(cmd, common);
    cmd->add_option("-i,--input", input, "Scan (.bin) or preprocessed cloud (.rspc); synthetic if omitted");
    cmd->add_option("-k,--keypoints", keep, "Keep the N lowest-sigma keypoints (0 keeps all)");
    cmd->add_flag("--random-init", random_init, "Use an untrained model");
  }

  std::string source;
  std::string target;
  auto* reg = app.add_subcommand("register", "Register two clouds; a synthetic pair if none given");
  add_common(reg, common);
  reg->add_option("--source", source, "Source scan or cloud");
  reg->add_option("--target", target, "Target scan or cloud");
  reg->add_flag("--random-init", random_init, "Use an untrained model");

  bool identical = false;
  std::string split = "test";
  auto* ev = app.add_subcommand("eval", "Repeatability, precision and registration over a corpus");
  add_common(ev, common);
  ev->add_flag("--random-init", random_init, "Use an untrained model");
  ev->add_flag("--identical-pairs", identical, "Pair every source with itself (smoke test)");
  ev->add_option("--split", split, "Corpus split")->check(CLI::IsMember({"train", "test"}));

  int stage = 0;
  std::string init_path;
  auto* tr = app.add_subcommand("train", "Two-stage training");
  add_common(tr, common);
  tr->add_option("--stage", stage, "1, 2, or 0 for both")->check(CLI::Range(0, 2));
  tr->add_option("--init", init_path, "Initial checkpoint");

  std::vector<std::size_t> bench_points{4096, 8192, 16384};
  std::vector<std::size_t> bench_keypoints{128, 256, 512};
  int repeats = 3;
  auto* be = app.add_subcommand("bench", "Detect+describe timing grid");
  add_common(be, common);
  be->add_option("--points", bench_points, "Input sizes")->delimiter(',');
  be->add_option("--keypoints", bench_keypoints, "Keypoint counts")->delimiter(',');
  be->add_option("--repeats", repeats, "Timed repetitions per cell (median)")->check(CLI::PositiveNumber);
  be->add_flag("--random-init", random_init, "Use an untrained model");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigExit;
  }

  try {
    if (pre->parsed()) return cmd_preprocess(common);
    if (det->parsed()) return cmd_detect(common, input, keep, random_init, false);
    if (des->parsed()) return cmd_detect(common, input, keep, random_init, true);
    if (reg->parsed()) return cmd_register(common, source, target, random_init);
    if (ev->parsed()) return cmd_eval(common, random_init, identical, split);
    if (tr->parsed()) return cmd_train(common, stage, init_path);
    if (be->parsed()) return cmd_bench(common, bench_points, bench_keypoints, repeats, random_init);
  } catch (const ConfigError& e) {
    spdlog::error("config error: {}", e.what());
    return kConfigExit;
  } catch (const DataError& e) {
    spdlog::error("data error: {}", e.what());
    return kDataExit;
  } catch (const NumericalError& e) {
    spdlog::error("numerical failure: {}", e.what());
    return kNumericalExit;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kInternal;
  }
  return kInternal;
}
