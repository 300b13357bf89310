#pragma once

// Analytic stratified scenes: nested primitives, a fixed directional light,
// per-level camera shells and a ground-truth ray tracer.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "strata/geometry.hpp"
#include "strata/image.hpp"
#include "strata/rendering.hpp"

namespace strata {

enum class PrimitiveKind { kSphere, kBox, kPlane };

enum class MaterialKind { kFlat, kChecker, kGradient };

/// Surface color. Checker alternates c1/c2 with period `scale` along the
/// surface coordinates; gradient blends c1 (bottom) to c2 (top) along the
/// primitive's local z axis.
struct Material {
  MaterialKind kind = MaterialKind::kFlat;
  Vec3 c1 = Vec3::Ones();
  Vec3 c2 = Vec3::Zero();
  double scale = 1.0;

  static Material flat(const Vec3& c) { return {MaterialKind::kFlat, c, c, 1.0}; }
  static Material checker(const Vec3& a, const Vec3& b, double period) { return {MaterialKind::kChecker, a, b, period}; }
  static Material gradient(const Vec3& bottom, const Vec3& top) { return {MaterialKind::kGradient, bottom, top, 1.0}; }
};

/// Unit sphere (radius 1), box [-0.5, 0.5]^3 or the plane z = 0 in local
/// coordinates, mapped to the world by scale, then rotation, then center.
struct Primitive {
  PrimitiveKind kind = PrimitiveKind::kSphere;
  Vec3 center = Vec3::Zero();
  Mat3 rotation = Mat3::Identity();
  Vec3 scale = Vec3::Ones();
  Material material;
  /// Material seen from inside a hollow primitive; defaults to `material`.
  std::optional<Material> interior;
  bool hollow = false;

  Vec3 to_local(const Vec3& p) const { return rotation.transpose() * (p - center); }

  /// Radius of a ball around the center containing the primitive (infinite
  /// for planes).
  double bounding_radius() const {
    switch (kind) {
      case PrimitiveKind::kSphere: return scale.maxCoeff();
      case PrimitiveKind::kBox: return 0.5 * scale.norm();
      case PrimitiveKind::kPlane: return std::numeric_limits<double>::infinity();
    }
    return 0;
  }

  /// Whether p lies strictly inside the enclosed volume.
  bool contains(const Vec3& p) const {
    const Vec3 q = to_local(p).cwiseQuotient(scale);
    switch (kind) {
      case PrimitiveKind::kSphere: return q.squaredNorm() < 1.0;
      case PrimitiveKind::kBox: return q.cwiseAbs().maxCoeff() < 0.5;
      case PrimitiveKind::kPlane: return false;
    }
    return false;
  }

  /// Distance from p to the surface. Exact for boxes, planes and uniformly
  /// scaled spheres; a lower bound for other spheres.
  double surface_distance(const Vec3& p) const {
    const Vec3 l = to_local(p);
    switch (kind) {
      case PrimitiveKind::kSphere: {
        const double r = l.cwiseQuotient(scale).norm();
        return std::abs(r - 1.0) * scale.minCoeff();
      }
      case PrimitiveKind::kBox: {
        const Vec3 h = 0.5 * scale;
        const Vec3 d = l.cwiseAbs() - h;
        if (d.maxCoeff() <= 0) return -d.maxCoeff();
        return d.cwiseMax(0.0).norm();
      }
      case PrimitiveKind::kPlane: return std::abs(l.z());
    }
    return 0;
  }
};

inline Primitive make_sphere(const Vec3& center, double radius, Material m, bool hollow = false) {
  Primitive p;
  p.kind = PrimitiveKind::kSphere;
  p.center = center;
  p.scale = Vec3::Constant(radius);
  p.material = m;
  p.hollow = hollow;
  return p;
}

inline Primitive make_box(const Vec3& center, const Vec3& size, Material m, bool hollow = false) {
  Primitive p;
  p.kind = PrimitiveKind::kBox;
  p.center = center;
  p.scale = size;
  p.material = m;
  p.hollow = hollow;
  return p;
}

inline Primitive make_plane(const Vec3& point, Material m) {
  Primitive p;
  p.kind = PrimitiveKind::kPlane;
  p.center = point;
  p.material = m;
  return p;
}

struct Hit {
  double t = 0.0;
  Vec3 normal = Vec3::Zero();         // unit, facing the incoming ray side that was hit
  Eigen::Vector2d uv = Eigen::Vector2d::Zero();  // surface coordinates in world units
  Vec3 local = Vec3::Zero();          // hit point in unit-primitive coordinates
  bool inside = false;
};

inline constexpr double kHitEpsilon = 1e-6;

/// Nearest intersection with t >= 1e-6. Hits on the inside of a primitive
/// report the inward normal.
inline std::optional<Hit> intersect(const Ray& ray, const Primitive& prim) {
  const Vec3 o = prim.to_local(ray.origin).cwiseQuotient(prim.scale);
  const Vec3 d = (prim.rotation.transpose() * ray.direction).cwiseQuotient(prim.scale);
  auto world_normal = [&](const Vec3& n_local) {
    return (prim.rotation * n_local.cwiseQuotient(prim.scale)).normalized();
  };
  Hit hit;
  Vec3 n_local;
  bool inside = false;
  switch (prim.kind) {
    case PrimitiveKind::kSphere: {
      const double a = d.squaredNorm(), b = o.dot(d), c = o.squaredNorm() - 1.0;
      const double disc = b * b - a * c;
      if (disc < 0) return std::nullopt;
      const double s = std::sqrt(disc);
      const double t0 = (-b - s) / a, t1 = (-b + s) / a;
      if (t0 >= kHitEpsilon) {
        hit.t = t0;
      } else if (t1 >= kHitEpsilon) {
        hit.t = t1;
        inside = true;
      } else {
        return std::nullopt;
      }
      hit.local = o + hit.t * d;
      n_local = hit.local;
      const double r = prim.scale.maxCoeff();
      hit.uv = Eigen::Vector2d(std::atan2(hit.local.y(), hit.local.x()) * r,
                               std::acos(std::clamp(hit.local.z(), -1.0, 1.0)) * r);
      break;
    }
    case PrimitiveKind::kBox: {
      double tmin = -std::numeric_limits<double>::infinity(), tmax = std::numeric_limits<double>::infinity();
      int axis_min = 0, axis_max = 0;
      for (int a = 0; a < 3; ++a) {
        if (d[a] == 0.0) {
          if (std::abs(o[a]) > 0.5) return std::nullopt;
          continue;
        }
        double ta = (-0.5 - o[a]) / d[a], tb = (0.5 - o[a]) / d[a];
        if (ta > tb) std::swap(ta, tb);
        if (ta > tmin) { tmin = ta; axis_min = a; }
        if (tb < tmax) { tmax = tb; axis_max = a; }
      }
      if (tmin > tmax) return std::nullopt;
      int axis;
      if (tmin >= kHitEpsilon) {
        hit.t = tmin;
        axis = axis_min;
      } else if (tmax >= kHitEpsilon) {
        hit.t = tmax;
        axis = axis_max;
        inside = true;
      } else {
        return std::nullopt;
      }
      hit.local = o + hit.t * d;
      n_local = Vec3::Zero();
      n_local[axis] = hit.local[axis] > 0 ? 1.0 : -1.0;
      const int u = (axis + 1) % 3, v = (axis + 2) % 3;
      hit.uv = Eigen::Vector2d((hit.local[u] + 0.5) * prim.scale[u], (hit.local[v] + 0.5) * prim.scale[v]);
      break;
    }
    case PrimitiveKind::kPlane: {
      if (d.z() == 0.0) return std::nullopt;
      const double t = -o.z() / d.z();
      if (t < kHitEpsilon) return std::nullopt;
      hit.t = t;
      hit.local = o + t * d;
      n_local = Vec3(0, 0, o.z() >= 0 ? 1.0 : -1.0);
      hit.uv = Eigen::Vector2d(hit.local.x() * prim.scale.x(), hit.local.y() * prim.scale.y());
      break;
    }
  }
  hit.normal = world_normal(n_local);
  hit.inside = inside;
  if (inside) hit.normal = -hit.normal;
  return hit;
}

inline Vec3 albedo(const Material& m, const Hit& hit, PrimitiveKind kind) {
  switch (m.kind) {
    case MaterialKind::kFlat: return m.c1;
    case MaterialKind::kChecker: {
      const double cell = 0.5 * m.scale;
      const long long parity = static_cast<long long>(std::floor(hit.uv.x() / cell)) +
                               static_cast<long long>(std::floor(hit.uv.y() / cell));
      return (parity % 2 == 0) ? m.c1 : m.c2;
    }
    case MaterialKind::kGradient: {
      const double half = kind == PrimitiveKind::kBox ? 0.5 : 1.0;
      const double f = std::clamp(0.5 * (hit.local.z() / half + 1.0), 0.0, 1.0);
      return (1.0 - f) * m.c1 + f * m.c2;
    }
  }
  return m.c1;
}

enum class ShellKind { kHemisphere, kSphere, kCircle };

inline const char* shell_name(ShellKind k) {
  switch (k) {
    case ShellKind::kHemisphere: return "hemisphere";
    case ShellKind::kSphere: return "sphere";
    case ShellKind::kCircle: return "circle";
  }
  return "?";
}

/// Camera positions on a sphere of `radius` around `center`, restricted to
/// elevations in [min_elevation, max_elevation] (radians). The circle shell
/// uses min_elevation only.
struct PoseSampler {
  ShellKind kind = ShellKind::kHemisphere;
  Vec3 center = Vec3::Zero();
  double radius = 1.0;
  double min_elevation = 0.0;
  double max_elevation = 0.5 * std::numbers::pi;
};

struct SplitCounts {
  int train = 0;
  int val = 0;
  int test = 0;
  int total() const { return train + val + test; }
};

struct LevelSpec {
  std::vector<Primitive> primitives;
  PoseSampler poses;
  SplitCounts counts;
  Vec3 background = Vec3::Ones();
};

struct SceneSpec {
  std::string name;
  std::vector<LevelSpec> levels;
  Vec3 light_direction = Vec3(0.3, 0.5, 0.8).normalized();  // towards the light
  double ambient = 0.2;
  int width = 200;
  int height = 200;
  double focal = 0.0;

  std::vector<const Primitive*> all_primitives() const {
    std::vector<const Primitive*> out;
    for (const auto& l : levels) {
      for (const auto& p : l.primitives) out.push_back(&p);
    }
    return out;
  }
};

inline double focal_for_fov(int width, double fov_degrees) {
  return 0.5 * width / std::tan(0.5 * fov_degrees * std::numbers::pi / 180.0);
}

/// Points area-uniformly distributed on the sampler's shell.
inline std::vector<Vec3> sample_positions(const PoseSampler& s, int count, std::mt19937_64& rng) {
  if (!(s.radius > 0)) throw std::invalid_argument("sample_poses: shell radius must be positive");
  if (count < 0) throw std::invalid_argument("sample_poses: negative count");
  double z_lo = -1.0, z_hi = 1.0;
  if (s.kind == ShellKind::kHemisphere) {
    z_lo = std::sin(std::max(s.min_elevation, 0.0));
    z_hi = std::sin(s.max_elevation);
  } else if (s.kind == ShellKind::kCircle) {
    z_lo = z_hi = std::sin(s.min_elevation);
  }
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Vec3> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const double z = z_lo + (z_hi - z_lo) * unit(rng);
    const double phi = 2.0 * std::numbers::pi * unit(rng);
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    out.push_back(s.center + s.radius * Vec3(r * std::cos(phi), r * std::sin(phi), z));
  }
  return out;
}

/// The innermost hollow primitive of `level - 1` that encloses the level's
/// cameras; null for level 0.
inline const Primitive* enclosing_shell(const SceneSpec& scene, std::size_t level) {
  if (level == 0) return nullptr;
  for (const auto& p : scene.levels[level - 1].primitives) {
    if (p.hollow && p.contains(scene.levels[level].poses.center)) return &p;
  }
  return nullptr;
}

/// near = 0.9 * distance to the closest surface; far = 1.1 * (distance to
/// the enclosing shell's center + its bounding radius), or over all finite
/// primitives for the outermost level.
inline std::pair<double, double> near_far(const SceneSpec& scene, std::size_t level, const Vec3& eye) {
  double closest = std::numeric_limits<double>::infinity();
  for (const Primitive* p : scene.all_primitives()) closest = std::min(closest, p->surface_distance(eye));
  double extent = 0.0;
  if (const Primitive* shell = enclosing_shell(scene, level)) {
    extent = (eye - shell->center).norm() + shell->bounding_radius();
  } else {
    for (const Primitive* p : scene.all_primitives()) {
      if (std::isfinite(p->bounding_radius())) extent = std::max(extent, (eye - p->center).norm() + p->bounding_radius());
    }
  }
  if (!std::isfinite(closest) || extent == 0.0) {
    throw std::invalid_argument("near_far: scene has no finite geometry");
  }
  if (!(closest > 0)) throw std::invalid_argument("near_far: camera lies on a surface");
  return {0.9 * closest, 1.1 * extent};
}

/// Cameras for one level, each looking at the shell center.
inline std::vector<Camera> sample_poses(const SceneSpec& scene, std::size_t level, std::mt19937_64& rng) {
  const LevelSpec& spec = scene.levels.at(level);
  std::vector<Camera> cams;
  for (const Vec3& eye : sample_positions(spec.poses, spec.counts.total(), rng)) {
    Camera c;
    c.width = scene.width;
    c.height = scene.height;
    c.focal = scene.focal;
    c.pose = look_at(eye, spec.poses.center);
    std::tie(c.t_near, c.t_far) = near_far(scene, level, eye);
    c.level = static_cast<int>(level);
    cams.push_back(c);
  }
  return cams;
}

/// Checks that every level after the first has its shell center and whole
/// camera shell strictly inside a hollow primitive of the previous level.
inline void check_nesting(const SceneSpec& scene) {
  if (scene.levels.empty()) throw std::invalid_argument("scene '" + scene.name + "' has no levels");
  for (std::size_t i = 1; i < scene.levels.size(); ++i) {
    const Primitive* shell = enclosing_shell(scene, i);
    const PoseSampler& s = scene.levels[i].poses;
    const bool ok = shell && shell->surface_distance(s.center) > s.radius;
    if (!ok) {
      throw std::invalid_argument("scene '" + scene.name + "': level " + std::to_string(i) +
                                  " camera shell is not strictly inside a hollow primitive of level " +
                                  std::to_string(i - 1));
    }
  }
}

struct GroundTruth {
  Image image;
  ScalarMap depth;  // infinity where nothing was hit
};

inline Vec3 shade(const SceneSpec& scene, const Ray& ray, const Vec3& background, double* depth) {
  std::optional<Hit> best;
  const Primitive* best_prim = nullptr;
  for (const Primitive* p : scene.all_primitives()) {
    auto h = intersect(ray, *p);
    if (h && (!best || h->t < best->t)) {
      best = h;
      best_prim = p;
    }
  }
  if (!best) {
    *depth = std::numeric_limits<double>::infinity();
    return background;
  }
  *depth = best->t;
  const Material& m = best->inside && best_prim->interior ? *best_prim->interior : best_prim->material;
  const Vec3 a = albedo(m, *best, best_prim->kind);
  const double diffuse = std::max(0.0, best->normal.dot(scene.light_direction));
  return (a * (scene.ambient + (1.0 - scene.ambient) * diffuse)).cwiseMax(0.0).cwiseMin(1.0);
}

inline GroundTruth render_ground_truth(const Camera& cam, const SceneSpec& scene) {
  cam.validate();
  for (const Primitive* p : scene.all_primitives()) {
    if (!p->hollow && p->contains(cam.position())) {
      throw std::invalid_argument("render_ground_truth: camera is inside a solid primitive");
    }
  }
  const Vec3 bg = scene.levels.at(static_cast<std::size_t>(cam.level)).background;
  GroundTruth gt{Image(cam.width, cam.height), ScalarMap(cam.width, cam.height)};
  for (int y = 0; y < cam.height; ++y) {
    for (int x = 0; x < cam.width; ++x) {
      Ray r = generate_ray(cam, x, y);
      double d;
      gt.image.set(x, y, shade(scene, r, bg, &d));
      gt.depth.values[std::size_t(y) * cam.width + x] = d;
    }
  }
  return gt;
}

// Presets. Radii, shells and counts are fixed choices; the outer level uses
// an upper hemisphere, inner levels full spheres.

inline constexpr double kPresetFov = 50.0;

inline SceneSpec preset_two_level(int resolution = 200) {
  SceneSpec s;
  s.name = "two-level";
  s.width = s.height = resolution;
  s.focal = focal_for_fov(resolution, kPresetFov);
  LevelSpec outer;
  outer.primitives.push_back(make_box(Vec3::Zero(), Vec3::Constant(2.0),
                                      Material::checker(Vec3(0.85, 0.3, 0.2), Vec3(0.95, 0.9, 0.7), 1.0), true));
  outer.primitives.back().interior = Material::checker(Vec3(0.15, 0.2, 0.35), Vec3(0.6, 0.75, 0.9), 1.0);
  outer.poses = {ShellKind::kHemisphere, Vec3::Zero(), 3.5, 0.1, 1.3};
  outer.counts = {30, 15, 15};
  outer.background = Vec3::Ones();
  LevelSpec inner;
  inner.primitives.push_back(make_sphere(Vec3::Zero(), 0.3, Material::gradient(Vec3(0.1, 0.3, 0.9), Vec3(0.2, 0.9, 0.3))));
  inner.poses = {ShellKind::kSphere, Vec3::Zero(), 0.75, 0.0, 0.0};
  inner.counts = {30, 15, 15};
  inner.background = Vec3::Zero();
  s.levels = {outer, inner};
  return s;
}

inline SceneSpec preset_cube_sphere_monkey_lite(int resolution = 200) {
  SceneSpec s;
  s.name = "cube-sphere-monkey-lite";
  s.width = s.height = resolution;
  s.focal = focal_for_fov(resolution, kPresetFov);
  LevelSpec cube;
  cube.primitives.push_back(make_box(Vec3::Zero(), Vec3::Constant(3.0),
                                     Material::checker(Vec3(0.9, 0.9, 0.9), Vec3(0.2, 0.25, 0.6), 0.75), true));
  cube.poses = {ShellKind::kHemisphere, Vec3::Zero(), 5.0, 0.1, 1.3};
  cube.counts = {30, 30, 30};
  LevelSpec sphere;
  sphere.primitives.push_back(
      make_sphere(Vec3::Zero(), 1.0, Material::gradient(Vec3(0.9, 0.5, 0.1), Vec3(0.3, 0.1, 0.5)), true));
  sphere.poses = {ShellKind::kSphere, Vec3::Zero(), 1.25, 0.0, 0.0};
  sphere.counts = {30, 30, 30};
  sphere.background = Vec3::Zero();
  LevelSpec monkey;
  monkey.primitives.push_back(make_sphere(Vec3::Zero(), 0.3, Material::flat(Vec3(0.7, 0.55, 0.35))));
  monkey.poses = {ShellKind::kSphere, Vec3::Zero(), 0.7, 0.0, 0.0};
  monkey.counts = {30, 30, 30};
  monkey.background = Vec3::Zero();
  s.levels = {cube, sphere, monkey};
  return s;
}

inline SceneSpec preset_six_level(int resolution = 200) {
  SceneSpec s;
  s.name = "six-level";
  s.width = s.height = resolution;
  s.focal = focal_for_fov(resolution, kPresetFov);
  const double radii[6] = {3.0, 2.0, 1.4, 1.0, 0.7, 0.25};
  const double shells[6] = {6.0, 2.5, 1.7, 1.2, 0.85, 0.58};
  const Vec3 colors[6] = {{0.9, 0.3, 0.3}, {0.3, 0.9, 0.3}, {0.3, 0.3, 0.9},
                          {0.9, 0.9, 0.3}, {0.3, 0.9, 0.9}, {0.9, 0.3, 0.9}};
  for (int i = 0; i < 6; ++i) {
    LevelSpec l;
    const bool innermost = i == 5;
    const double r = radii[i];
    l.primitives.push_back(make_sphere(Vec3::Zero(), r, Material::checker(colors[i], 0.5 * colors[i], r), !innermost));
    l.poses = {i == 0 ? ShellKind::kHemisphere : ShellKind::kSphere, Vec3::Zero(), shells[i], i == 0 ? 0.1 : 0.0,
               i == 0 ? 1.3 : 0.0};
    l.counts = {30, 15, 15};
    l.background = i == 0 ? Vec3::Ones() : Vec3::Zero();
    s.levels.push_back(l);
  }
  return s;
}

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = {"two-level", "cube-sphere-monkey-lite", "six-level"};
  return names;
}

inline SceneSpec make_preset(const std::string& name, int resolution = 200) {
  if (resolution < 1) throw std::invalid_argument("resolution must be >= 1");
  if (name == "two-level") return preset_two_level(resolution);
  if (name == "cube-sphere-monkey-lite") return preset_cube_sphere_monkey_lite(resolution);
  if (name == "six-level") return preset_six_level(resolution);
  throw std::invalid_argument("unknown preset '" + name + "' (expected two-level, cube-sphere-monkey-lite or six-level)");
}

}  // namespace strata
