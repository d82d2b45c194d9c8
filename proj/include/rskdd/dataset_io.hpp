#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "rskdd/pc_core.hpp"
#include "rskdd/settings.hpp"

namespace rskdd {

struct ScanReadStats {
  std::size_t rejected = 0;  // records with non-finite coordinates
};

/// KITTI velodyne scan: little-endian f32 (x, y, z, reflectance) records.
/// Reflectance is dropped. Throws DataError on a missing file or a byte
/// length that is not a multiple of 16.
PointCloud read_scan(const std::filesystem::path& path, ScanReadStats* stats = nullptr);
PointCloud parse_scan(std::string_view bytes, ScanReadStats* stats = nullptr);
/// Writes positions with reflectance 0.
void write_scan(const std::filesystem::path& path, const PointCloud& cloud);
std::string encode_scan(const PointCloud& cloud);

/// One pose per line, 12 floats, row-major 3x4. Rotations are projected onto
/// SO(3) to absorb text rounding; far-off rotations are rejected.
std::vector<RigidTransform> read_poses(const std::filesystem::path& path);
void write_poses(const std::filesystem::path& path, const std::vector<RigidTransform>& poses);
/// KITTI calib.txt: the "Tr:" line (velodyne to camera).
RigidTransform read_calibration(const std::filesystem::path& path);

struct SequenceManifest {
  std::string sequence_id;
  std::vector<std::filesystem::path> scans;
  std::vector<RigidTransform> poses;  // LiDAR frame -> common frame

  void validate() const;
};

/// JSON manifest: {"sequence_id", "scans": [...] | "scan_dir", "poses",
/// "calibration"?}. Relative paths resolve against the manifest directory.
/// With a calibration Tr, poses become Tr^-1 * pose * Tr.
SequenceManifest load_manifest(const std::filesystem::path& path);

struct FramePair {
  std::size_t source;
  std::size_t target;
  RigidTransform relative;  // target <- source
};

/// pose_target^-1 * pose_source.
RigidTransform relative_transform(const SequenceManifest& m, std::size_t source, std::size_t target);

/// (i, i + stride) for every valid i.
std::vector<FramePair> make_training_pairs(const SequenceManifest& m, std::size_t stride = 10);
/// Unordered pairs (i, j), 0 < |i - j| <= window.
std::vector<FramePair> make_test_pairs(const SequenceManifest& m, std::size_t window = 5);

/// Preprocessed cloud: "RSPC", u32 version, u32 N, u32 C, then N records of
/// (3 + C) little-endian f32.
void write_cloud(const std::filesystem::path& path, const PointCloud& cloud);
PointCloud read_cloud(const std::filesystem::path& path);

/// Voxel filter, normals and curvature, then a random sample of n_points
/// (all points kept when fewer remain).
PointCloud preprocess(const PointCloud& raw, const PreprocessConfig& config);

}  // namespace rskdd
