#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "rskdd/dataset_io.hpp"
#include "rskdd/dumps.hpp"
#include "rskdd/synth.hpp"

using namespace rskdd;
namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "rskdd_cli_test";

int cli(const std::string& args) {
  const std::string cmd = std::string(RSKDD_CLI_PATH) + " " + args + " --output-root " +
                          (kRoot / "runs").string() + " > " + (kRoot / "out.log").string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string log_text() { return read_file(kRoot / "out.log"); }

nlohmann::json report(const std::string& run, const std::string& file) {
  return nlohmann::json::parse(read_file(kRoot / "runs" / run / "reports" / file));
}

const std::string kSmall =
    " --set synth.pairs=2 synth.n_points=1500 detect.m=32 detect.cluster.k=16"
    " eval.keypoint_counts=[32] eval.registration_keypoints=32 preprocess.n_points=1500";

}  // namespace

TEST_CASE("cli exit codes and smoke runs") {
  fs::remove_all(kRoot);
  fs::create_directories(kRoot);

  CHECK(cli("--help") == 0);
  CHECK(cli("nosuchcommand") == 2);
  CHECK(cli("eval --set detect.bogus=1") == 2);
  CHECK(cli("eval --set loss.matching.temperature=0") == 2);

  CHECK(cli("eval -n nock" + kSmall) == 3);
  CHECK(log_text().find("checkpoints/model.ckpt") != std::string::npos);

  CHECK(cli("eval -n ident --random-init --identical-pairs" + kSmall) == 0);
  const auto ident = report("ident", "report.json");
  CHECK(ident["per_keypoint_count"][0]["repeatability"]["mean"] == 1.0);
  CHECK(fs::exists(kRoot / "runs/ident/config.resolved"));
  CHECK(fs::exists(kRoot / "runs/ident/logs/eval.log"));

  CHECK(cli("register -n reg --random-init --set synth.jitter=0 synth.n_points=3000") == 0);
  CHECK(report("reg", "registration.json")["success"] == true);

  CHECK(cli("detect -n det --random-init --keypoints 16" + kSmall) == 0);
  CHECK(decode_keypoints(read_file(kRoot / "runs/det/reports/keypoints.bin")).size() == 16);
  CHECK(cli("describe -n det --random-init" + kSmall) == 0);
  CHECK(decode_descriptors(read_file(kRoot / "runs/det/reports/descriptors.bin")).size() == 32);

  CHECK(cli("bench -n bench --random-init --points 1024 --keypoints 16,32 --repeats 1 --set detect.cluster.k=16") == 0);
  std::istringstream csv(read_file(kRoot / "runs/bench/reports/bench.csv"));
  std::string line;
  int rows = 0;
  while (std::getline(csv, line)) ++rows;
  CHECK(rows == 3);

  CHECK(cli("train -n tr --stage 2" + kSmall) == 2);
  CHECK(cli("train -n tr --set train.stage1_epochs=1 train.stage2_epochs=1" + kSmall) == 0);
  CHECK(fs::exists(kRoot / "runs/tr/checkpoints/model.ckpt"));
  CHECK(cli("eval -n tr" + kSmall) == 0);
}

TEST_CASE("cli preprocess caches and skips corrupted scans") {
  fs::remove_all(kRoot);
  const fs::path data = kRoot / "data";
  fs::create_directories(data / "velodyne");
  SceneOptions o;
  o.with_normals = false;
  std::vector<RigidTransform> poses;
  for (int i = 0; i < 3; ++i) {
    write_scan(data / "velodyne" / (std::to_string(i) + ".bin"),
               synth_scene(40 + static_cast<std::uint64_t>(i), 3000, SceneKind::kStructured, o).source);
    poses.push_back(RigidTransform::from_axis_angle(Vec3::UnitZ(), 0.0, Vec3(i, 0, 0)));
  }
  write_poses(data / "poses.txt", poses);
  write_file(data / "seq.json", R"({"sequence_id": "s", "scan_dir": "velodyne", "poses": "poses.txt"})");
  const std::string args = "preprocess -n pre --set manifest=" + (data / "seq.json").string() +
                           " preprocess.n_points=1000";

  CHECK(cli(args) == 0);
  const auto first = report("pre", "preprocess.json");
  REQUIRE(first["frames"].size() == 3);
  const fs::path cached = kRoot / "runs/cache/s" / first["frames"][0]["cache"].get<std::string>();
  REQUIRE(fs::exists(cached));
  const auto stamp = fs::last_write_time(cached);

  CHECK(cli(args) == 0);
  CHECK(fs::last_write_time(cached) == stamp);
  CHECK(log_text().find("3 from cache") != std::string::npos);
  CHECK(report("pre", "preprocess.json") == first);

  // Truncate one scan: it is skipped and the run reports partial success.
  auto bytes = read_file(data / "velodyne/1.bin");
  write_file(data / "velodyne/1.bin", bytes.substr(0, bytes.size() - 5));
  CHECK(cli(args) == 6);
  const auto partial = report("pre", "preprocess.json");
  CHECK(partial["frames"].size() == 2);
  CHECK(partial["skipped"][0] == "1.bin");
  fs::remove_all(kRoot);
}
