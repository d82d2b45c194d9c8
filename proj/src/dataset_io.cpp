#include "rskdd/dataset_io.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "binary_io.hpp"
#include "rskdd/errors.hpp"
#include "rskdd/spatial.hpp"

namespace rskdd {
namespace {

constexpr std::string_view kCloudMagic = "RSPC";
constexpr std::uint32_t kCloudVersion = 1;

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void spit(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

RigidTransform from_row_major_3x4(const std::vector<double>& v, const std::string& where) {
  RigidTransform t;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) t.rotation(r, c) = v[static_cast<std::size_t>(4 * r + c)];
    t.translation(r) = v[static_cast<std::size_t>(4 * r + 3)];
  }
  if (!t.rotation.allFinite() || !t.translation.allFinite()) {
    throw DataError(where + ": non-finite pose value");
  }
  if (!t.is_valid(1e-3)) throw DataError(where + ": rotation is not orthonormal");
  Eigen::JacobiSVD<Mat3> svd(t.rotation, Eigen::ComputeFullU | Eigen::ComputeFullV);
  t.rotation = svd.matrixU() * svd.matrixV().transpose();
  return t;
}

}  // namespace

PointCloud parse_scan(std::string_view bytes, ScanReadStats* stats) {
  if (bytes.size() % 16 != 0) {
    throw DataError("scan: byte length " + std::to_string(bytes.size()) +
                    " is not a multiple of 16; truncated record at byte offset " +
                    std::to_string(bytes.size() - bytes.size() % 16));
  }
  detail::ByteReader in(bytes);
  std::vector<Vec3> points;
  points.reserve(bytes.size() / 16);
  std::size_t rejected = 0;
  while (!in.done()) {
    const float x = in.f32();
    const float y = in.f32();
    const float z = in.f32();
    in.f32();  // reflectance
    if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z)) {
      ++rejected;
      continue;
    }
    points.emplace_back(x, y, z);
  }
  if (rejected > 0) spdlog::warn("scan: rejected {} non-finite points", rejected);
  if (stats != nullptr) stats->rejected = rejected;
  return PointCloud(std::move(points));
}

PointCloud read_scan(const std::filesystem::path& path, ScanReadStats* stats) {
  try {
    return parse_scan(slurp(path), stats);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

std::string encode_scan(const PointCloud& cloud) {
  std::string out;
  out.reserve(cloud.size() * 16);
  for (const auto& p : cloud.positions()) {
    detail::put_f32(out, static_cast<float>(p.x()));
    detail::put_f32(out, static_cast<float>(p.y()));
    detail::put_f32(out, static_cast<float>(p.z()));
    detail::put_f32(out, 0.0f);
  }
  return out;
}

void write_scan(const std::filesystem::path& path, const PointCloud& cloud) {
  spit(path, encode_scan(cloud));
}

std::vector<RigidTransform> read_poses(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open pose file " + path.string());
  std::vector<RigidTransform> poses;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    std::vector<double> v;
    double x = 0.0;
    while (ls >> x) v.push_back(x);
    const std::string where = path.string() + ":" + std::to_string(line_no);
    if (v.size() != 12) throw DataError(where + ": expected 12 values");
    poses.push_back(from_row_major_3x4(v, where));
  }
  return poses;
}

void write_poses(const std::filesystem::path& path, const std::vector<RigidTransform>& poses) {
  std::ostringstream os;
  os.precision(17);
  for (const auto& p : poses) {
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) os << p.rotation(r, c) << ' ';
      os << p.translation(r) << (r == 2 ? '\n' : ' ');
    }
  }
  spit(path, os.str());
}

RigidTransform read_calibration(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open calibration file " + path.string());
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("Tr:", 0) != 0) continue;
    std::istringstream ls(line.substr(3));
    std::vector<double> v;
    double x = 0.0;
    while (ls >> x) v.push_back(x);
    if (v.size() != 12) throw DataError(path.string() + ": Tr needs 12 values");
    return from_row_major_3x4(v, path.string());
  }
  throw DataError(path.string() + ": no Tr: line");
}

void SequenceManifest::validate() const {
  if (poses.size() != scans.size()) {
    throw DataError("manifest " + sequence_id + ": " + std::to_string(scans.size()) + " scans but " +
                    std::to_string(poses.size()) + " poses");
  }
  for (const auto& p : poses) {
    if (!p.is_valid()) throw DataError("manifest " + sequence_id + ": invalid pose");
  }
}

SequenceManifest load_manifest(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(slurp(path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  const auto base = path.parent_path();
  auto resolve = [&](const std::string& p) {
    const std::filesystem::path fp(p);
    return fp.is_absolute() ? fp : base / fp;
  };

  SequenceManifest m;
  m.sequence_id = j.value("sequence_id", path.stem().string());
  if (j.contains("scans")) {
    for (const auto& s : j.at("scans")) m.scans.push_back(resolve(s.get<std::string>()));
  } else if (j.contains("scan_dir")) {
    const auto dir = resolve(j.at("scan_dir").get<std::string>());
    if (!std::filesystem::is_directory(dir)) throw DataError("scan_dir not found: " + dir.string());
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
      if (e.path().extension() == ".bin") m.scans.push_back(e.path());
    }
    std::sort(m.scans.begin(), m.scans.end());
  } else {
    throw DataError(path.string() + ": manifest needs \"scans\" or \"scan_dir\"");
  }
  if (!j.contains("poses")) throw DataError(path.string() + ": manifest needs \"poses\"");
  m.poses = read_poses(resolve(j.at("poses").get<std::string>()));
  if (j.contains("calibration")) {
    const RigidTransform tr = read_calibration(resolve(j.at("calibration").get<std::string>()));
    const RigidTransform tr_inv = tr.inverse();
    for (auto& p : m.poses) p = tr_inv * p * tr;
  }
  m.validate();
  return m;
}

RigidTransform relative_transform(const SequenceManifest& m, std::size_t source,
                                  std::size_t target) {
  return m.poses.at(target).inverse() * m.poses.at(source);
}

std::vector<FramePair> make_training_pairs(const SequenceManifest& m, std::size_t stride) {
  if (stride == 0) throw ConfigError("make_training_pairs: stride must be >= 1");
  std::vector<FramePair> out;
  for (std::size_t i = 0; i + stride < m.poses.size(); ++i) {
    out.push_back({i, i + stride, relative_transform(m, i, i + stride)});
  }
  return out;
}

std::vector<FramePair> make_test_pairs(const SequenceManifest& m, std::size_t window) {
  std::vector<FramePair> out;
  const std::size_t n = m.poses.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n && j <= i + window; ++j) {
      out.push_back({i, j, relative_transform(m, i, j)});
    }
  }
  return out;
}

void write_cloud(const std::filesystem::path& path, const PointCloud& cloud) {
  std::string out(kCloudMagic);
  detail::put_u32(out, kCloudVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(cloud.size()));
  detail::put_u32(out, static_cast<std::uint32_t>(cloud.channel_width()));
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    for (int k = 0; k < 3; ++k) detail::put_f32(out, static_cast<float>(cloud.position(i)(k)));
    for (int c = 0; c < cloud.channel_width(); ++c) {
      detail::put_f32(out, static_cast<float>(cloud.channels()(static_cast<Eigen::Index>(i), c)));
    }
  }
  spit(path, out);
}

PointCloud read_cloud(const std::filesystem::path& path) {
  const std::string bytes = slurp(path);
  detail::ByteReader in(bytes);
  if (in.take(kCloudMagic.size()) != kCloudMagic) throw DataError(path.string() + ": bad magic");
  if (in.u32() != kCloudVersion) throw DataError(path.string() + ": unsupported version");
  const std::uint32_t n = in.u32();
  const std::uint32_t c = in.u32();
  std::vector<Vec3> pos(n);
  RowMatrix ch(n, c);
  for (std::uint32_t i = 0; i < n; ++i) {
    for (int k = 0; k < 3; ++k) pos[i](k) = in.f32();
    for (std::uint32_t k = 0; k < c; ++k) ch(i, k) = in.f32();
  }
  if (!in.done()) throw DataError(path.string() + ": trailing bytes");
  return PointCloud(std::move(pos), std::move(ch));
}

PointCloud preprocess(const PointCloud& raw, const PreprocessConfig& cfg) {
  PointCloud cloud = voxel_downsample(raw, cfg.voxel_grid);
  if (cloud.size() < static_cast<std::size_t>(cfg.k_normal)) {
    throw DataError("preprocess: only " + std::to_string(cloud.size()) +
                    " points after voxel filtering");
  }
  cloud = estimate_normals_curvature(cloud, cfg.k_normal);
  if (cloud.size() <= cfg.n_points) {
    spdlog::debug("preprocess: {} points, fewer than the {} requested", cloud.size(), cfg.n_points);
    return cloud;
  }
  return cloud.select(random_sample_candidates(cloud, cfg.n_points, cfg.seed));
}

}  // namespace rskdd
