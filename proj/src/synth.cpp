#include "rskdd/synth.hpp"

#include <cmath>
#include <functional>
#include <numbers>
#include <random>

#include "rskdd/errors.hpp"
#include "rskdd/spatial.hpp"

namespace rskdd {
namespace {

constexpr double kGroundZ = -1.7;
constexpr double kDeg = std::numbers::pi / 180.0;
constexpr int kReliefWaves = 6;
constexpr double kAreaPerBox = 12.0;

struct Surface {
  double area;
  std::function<Vec3(std::mt19937_64&)> sample;
};

using Uniform = std::uniform_real_distribution<double>;

void add_rect(std::vector<Surface>& out, const Vec3& origin, const Vec3& u, const Vec3& v) {
  out.push_back({u.cross(v).norm(), [=](std::mt19937_64& rng) {
                   Uniform unit(0.0, 1.0);
                   const double a = unit(rng);
                   const double b = unit(rng);
                   return Vec3(origin + a * u + b * v);
                 }});
}

void add_box(std::vector<Surface>& out, const Vec3& base_center, double w, double d, double h,
             double yaw) {
  const Vec3 ex(std::cos(yaw) * w, std::sin(yaw) * w, 0.0);
  const Vec3 ey(-std::sin(yaw) * d, std::cos(yaw) * d, 0.0);
  const Vec3 ez(0.0, 0.0, h);
  const Vec3 corner = base_center - 0.5 * ex - 0.5 * ey;
  add_rect(out, corner, ex, ez);
  add_rect(out, corner + ey, ex, ez);
  add_rect(out, corner, ey, ez);
  add_rect(out, corner + ex, ey, ez);
  add_rect(out, corner + ez, ex, ey);
}

void add_pole(std::vector<Surface>& out, const Vec3& base, double radius, double height) {
  out.push_back({2.0 * std::numbers::pi * radius * height, [=](std::mt19937_64& rng) {
                   Uniform ang(0.0, 2.0 * std::numbers::pi);
                   Uniform up(0.0, height);
                   const double a = ang(rng);
                   return Vec3(base + Vec3(radius * std::cos(a), radius * std::sin(a), up(rng)));
                 }});
}

// Smooth ground relief: a few random plane waves.
struct Relief {
  std::vector<Eigen::Vector4d> waves;  // kx, ky, phase, amplitude

  double operator()(double x, double y) const {
    double z = 0.0;
    for (const auto& w : waves) z += w(3) * std::sin(w(0) * x + w(1) * y + w(2));
    return z;
  }
};

Relief make_relief(std::mt19937_64& rng) {
  Uniform dir(0.0, 2.0 * std::numbers::pi);
  Uniform wavelength(3.0, 9.0);
  Uniform amp(0.1, 0.3);
  Relief r;
  for (int i = 0; i < kReliefWaves; ++i) {
    const double a = dir(rng);
    const double k = 2.0 * std::numbers::pi / wavelength(rng);
    r.waves.emplace_back(k * std::cos(a), k * std::sin(a), dir(rng), amp(rng));
  }
  return r;
}

struct Scene {
  std::vector<Surface> surfaces;
  double x_min, x_max, y_min, y_max;
};

Scene make_structured(std::mt19937_64& rng, double a, double shift) {
  Scene s{{}, -a, a + shift, -a, a};
  const double len_x = s.x_max - s.x_min;
  const double len_y = s.y_max - s.y_min;
  const Relief relief = make_relief(rng);
  const double x0 = s.x_min;
  const double y0 = s.y_min;
  s.surfaces.push_back({len_x * len_y, [=](std::mt19937_64& r) {
                          Uniform unit(0.0, 1.0);
                          const double x = x0 + unit(r) * len_x;
                          const double y = y0 + unit(r) * len_y;
                          return Vec3(x, y, kGroundZ + relief(x, y));
                        }});
  // Walls along both long sides.
  add_rect(s.surfaces, Vec3(s.x_min, s.y_min, kGroundZ), Vec3(len_x, 0, 0), Vec3(0, 0, 3.0));
  add_rect(s.surfaces, Vec3(s.x_min, s.y_max, kGroundZ), Vec3(len_x, 0, 0), Vec3(0, 0, 3.0));

  Uniform ux(s.x_min + 1.0, s.x_max - 1.0);
  Uniform uy(s.y_min + 1.0, s.y_max - 1.0);
  Uniform size(0.4, 2.5);
  Uniform height(0.5, 4.0);
  Uniform yaw(0.0, std::numbers::pi);
  const int boxes = std::max(4, static_cast<int>(len_x * len_y / kAreaPerBox));
  for (int i = 0; i < boxes; ++i) {
    const double x = ux(rng);
    const double y = uy(rng);
    add_box(s.surfaces, Vec3(x, y, kGroundZ + relief(x, y) - 0.3), size(rng), size(rng),
            height(rng), yaw(rng));
  }
  Uniform radius(0.1, 0.3);
  Uniform pole_h(2.0, 5.0);
  const int poles = std::max(2, boxes / 2);
  for (int i = 0; i < poles; ++i) {
    const double x = ux(rng);
    const double y = uy(rng);
    add_pole(s.surfaces, Vec3(x, y, kGroundZ + relief(x, y) - 0.3), radius(rng), pole_h(rng));
  }
  return s;
}

// Uniform draws from the scene surface restricted to x in [x0, x0 + 2a].
std::vector<Vec3> sample_view(const Scene& scene, SceneKind kind, std::size_t n, double x0, double a,
                              std::mt19937_64& rng) {
  std::vector<Vec3> out;
  out.reserve(n);
  if (kind == SceneKind::kUniform) {
    Uniform ux(x0, x0 + 2.0 * a);
    Uniform uy(-a, a);
    Uniform uz(kGroundZ, kGroundZ + 4.0);
    while (out.size() < n) out.emplace_back(ux(rng), uy(rng), uz(rng));
    return out;
  }
  std::vector<double> areas;
  for (const auto& s : scene.surfaces) areas.push_back(s.area);
  std::discrete_distribution<std::size_t> pick(areas.begin(), areas.end());
  Uniform unit(0.0, 1.0);
  Uniform ux(x0, x0 + 2.0 * a);
  Uniform uy(-a, a);
  Uniform uz(kGroundZ, kGroundZ + 3.0);
  constexpr double kClutter = 0.01;
  while (out.size() < n) {
    if (unit(rng) < kClutter) {
      out.emplace_back(ux(rng), uy(rng), uz(rng));
      continue;
    }
    const Vec3 p = scene.surfaces[pick(rng)].sample(rng);
    if (p.x() >= x0 && p.x() <= x0 + 2.0 * a) out.push_back(p);
  }
  return out;
}

PointCloud finish_view(std::vector<Vec3> points, const SceneOptions& opt, std::mt19937_64& rng) {
  if (opt.jitter > 0.0) {
    std::normal_distribution<double> noise(0.0, opt.jitter);
    for (auto& p : points) p += Vec3(noise(rng), noise(rng), noise(rng));
  }
  PointCloud cloud(std::move(points));
  if (opt.with_normals && cloud.size() >= static_cast<std::size_t>(opt.k_normal)) {
    return estimate_normals_curvature(cloud, opt.k_normal);
  }
  return cloud;
}

}  // namespace

SceneOptions scene_options(const SynthConfig& c) {
  SceneOptions o;
  o.jitter = c.jitter;
  o.overlap = c.overlap;
  o.max_rotation_deg = c.max_rotation_deg;
  o.max_translation = c.max_translation;
  o.half_extent = c.half_extent;
  return o;
}

SynthPair synth_scene(std::uint64_t seed, std::size_t n_points, SceneKind kind,
                      const SceneOptions& opt) {
  if (n_points == 0) throw ConfigError("synth_scene: n_points must be >= 1");
  if (!(opt.overlap > 0.0 && opt.overlap <= 1.0)) throw ConfigError("synth_scene: overlap must be in (0,1]");
  const double a = opt.half_extent;
  const double shift = 2.0 * a * (1.0 - opt.overlap);

  std::mt19937_64 layout_rng(derive_seed(seed, 0));
  const Scene scene = kind == SceneKind::kStructured ? make_structured(layout_rng, a, shift)
                                                     : Scene{{}, -a, a + shift, -a, a};

  std::mt19937_64 pose_rng(derive_seed(seed, 1));
  Uniform unit(-1.0, 1.0);
  const double tilt = std::min(2.0, opt.max_rotation_deg) * kDeg;
  const Mat3 rot = (Eigen::AngleAxisd(unit(pose_rng) * opt.max_rotation_deg * kDeg, Vec3::UnitZ()) *
                    Eigen::AngleAxisd(unit(pose_rng) * tilt, Vec3::UnitY()) *
                    Eigen::AngleAxisd(unit(pose_rng) * tilt, Vec3::UnitX()))
                       .toRotationMatrix();
  const double heading = unit(pose_rng) * std::numbers::pi;
  const double dist = 0.5 * (unit(pose_rng) + 1.0) * opt.max_translation;
  Vec3 t(dist * std::cos(heading), dist * std::sin(heading), 0.0);
  t.z() = std::clamp(0.2 * unit(pose_rng), -opt.max_translation, opt.max_translation);

  SynthPair out;
  out.gt.rotation = rot;
  out.gt.translation = t;

  std::mt19937_64 src_rng(derive_seed(seed, 2));
  std::mt19937_64 dst_rng(derive_seed(seed, 3));
  auto src_pts = sample_view(scene, kind, n_points, -a, a, src_rng);
  out.target_world = sample_view(scene, kind, n_points, -a + shift, a, dst_rng);

  std::vector<Vec3> dst_pts;
  dst_pts.reserve(n_points);
  for (const auto& p : out.target_world) dst_pts.push_back(out.gt.apply(p));

  std::mt19937_64 noise_rng(derive_seed(seed, 4));
  out.source = finish_view(std::move(src_pts), opt, noise_rng);
  out.target = finish_view(std::move(dst_pts), opt, noise_rng);
  return out;
}

}  // namespace rskdd
