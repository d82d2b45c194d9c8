#include "rskdd/dumps.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

#include "binary_io.hpp"
#include "rskdd/errors.hpp"

namespace rskdd {
namespace {

constexpr std::string_view kKeypointMagic = "RSKP";
constexpr std::string_view kDescriptorMagic = "RSDS";

void expect_header(detail::ByteReader& in, std::string_view magic) {
  if (in.take(magic.size()) != magic) throw DataError("dump: bad magic");
  const std::uint32_t version = in.u32();
  if (version != kDumpVersion) throw DataError("dump: unsupported version " + std::to_string(version));
}

}  // namespace

std::string keypoints_csv(const KeypointSet& set) {
  std::ostringstream os;
  os << std::setprecision(9) << "x,y,z,sigma\n";
  for (std::size_t i = 0; i < set.size(); ++i) {
    const Vec3& p = set.keypoints[i];
    os << p.x() << ',' << p.y() << ',' << p.z() << ',' << set.sigmas[i] << '\n';
  }
  return os.str();
}

std::string encode_keypoints(const KeypointSet& set) {
  std::string out(kKeypointMagic);
  detail::put_u32(out, kDumpVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(set.size()));
  for (std::size_t i = 0; i < set.size(); ++i) {
    for (int k = 0; k < 3; ++k) detail::put_f32(out, static_cast<float>(set.keypoints[i](k)));
    detail::put_f32(out, static_cast<float>(set.sigmas[i]));
  }
  return out;
}

std::vector<KeypointRecord> decode_keypoints(const std::string& bytes) {
  detail::ByteReader in(bytes);
  expect_header(in, kKeypointMagic);
  const std::uint32_t n = in.u32();
  std::vector<KeypointRecord> out(n);
  for (auto& r : out) {
    for (auto& v : r) v = in.f32();
  }
  if (!in.done()) throw DataError("keypoint dump: trailing bytes");
  return out;
}

std::string encode_descriptors(const DescriptorSet& set) {
  std::string out(kDescriptorMagic);
  detail::put_u32(out, kDumpVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(set.size()));
  detail::put_u32(out, static_cast<std::uint32_t>(set.dim()));
  for (Eigen::Index r = 0; r < set.values.rows(); ++r) {
    for (Eigen::Index c = 0; c < set.values.cols(); ++c) {
      detail::put_f32(out, static_cast<float>(set.values(r, c)));
    }
  }
  return out;
}

DescriptorSet decode_descriptors(const std::string& bytes) {
  detail::ByteReader in(bytes);
  expect_header(in, kDescriptorMagic);
  const std::uint32_t m = in.u32();
  const std::uint32_t d = in.u32();
  DescriptorSet out;
  out.values.resize(m, d);
  for (std::uint32_t r = 0; r < m; ++r) {
    for (std::uint32_t c = 0; c < d; ++c) out.values(r, c) = in.f32();
  }
  if (!in.done()) throw DataError("descriptor dump: trailing bytes");
  return out;
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace rskdd
