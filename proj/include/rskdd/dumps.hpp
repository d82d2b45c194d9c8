#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rskdd/descriptor.hpp"

namespace rskdd {

// Keypoint dump: CSV "x,y,z,sigma", or binary "RSKP", u32 version, u32 count,
// then count records of four little-endian f32 (x, y, z, sigma).
// Descriptor dump: "RSDS", u32 version, u32 M, u32 d, then M*d little-endian
// f32, row by row.
inline constexpr std::uint32_t kDumpVersion = 1;

using KeypointRecord = std::array<float, 4>;

std::string keypoints_csv(const KeypointSet& set);
std::string encode_keypoints(const KeypointSet& set);
std::vector<KeypointRecord> decode_keypoints(const std::string& bytes);

std::string encode_descriptors(const DescriptorSet& set);
/// Values come back as f32-rounded doubles.
DescriptorSet decode_descriptors(const std::string& bytes);

void write_file(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace rskdd
