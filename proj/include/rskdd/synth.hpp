#pragma once

#include <cstdint>

#include "rskdd/pc_core.hpp"
#include "rskdd/settings.hpp"

namespace rskdd {

enum class SceneKind {
  kStructured,  ///< ground plane, boxes and poles with a little clutter
  kUniform,     ///< uniform points in a slab
};

struct SceneOptions {
  double jitter = 0.01;            // per-point Gaussian std (m)
  double overlap = 0.7;            // shared fraction of the view windows
  double max_rotation_deg = 30.0;  // yaw bound; roll and pitch stay within 2 degrees
  double max_translation = 5.0;
  double half_extent = 10.0;       // view window half-width (m)
  bool with_normals = true;        // attach normal/curvature channels
  int k_normal = 16;
};

/// A source view, an independently sampled target view and the transform
/// taking source coordinates to target coordinates.
struct SynthPair {
  PointCloud source;
  PointCloud target;
  RigidTransform gt;
  /// Target samples in the source frame before noise and the frame change.
  std::vector<Vec3> target_world;
};

SynthPair synth_scene(std::uint64_t seed, std::size_t n_points, SceneKind kind,
                      const SceneOptions& options = {});

SceneOptions scene_options(const SynthConfig& config);

}  // namespace rskdd
