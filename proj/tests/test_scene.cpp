#include <cmath>
#include <random>

#include <boost/math/distributions/chi_squared.hpp>
#include <gtest/gtest.h>

#include "strata/scene.hpp"

using namespace strata;

namespace {

Ray ray_from(const Vec3& o, const Vec3& d) {
  Ray r;
  r.origin = o;
  r.direction = d.normalized();
  r.t_near = 0;
  r.t_far = 100;
  return r;
}

SceneSpec single_level(std::vector<Primitive> prims, const Vec3& bg, int res = 9) {
  SceneSpec s;
  s.name = "test";
  s.width = s.height = res;
  s.focal = focal_for_fov(res, 40);
  LevelSpec l;
  l.primitives = std::move(prims);
  l.background = bg;
  l.poses = {ShellKind::kHemisphere, Vec3::Zero(), 5.0, 0.1, 1.3};
  l.counts = {3, 1, 1};
  s.levels = {l};
  return s;
}

Camera camera_at(const SceneSpec& s, const Vec3& eye, const Vec3& target = Vec3::Zero()) {
  Camera c;
  c.width = s.width;
  c.height = s.height;
  c.focal = s.focal;
  c.pose = look_at(eye, target);
  c.t_near = 0.1;
  c.t_far = 20;
  return c;
}

}  // namespace

TEST(Intersect, SphereFrontHit) {
  auto h = intersect(ray_from(Vec3(0, 0, -5), Vec3(0, 0, 1)), make_sphere(Vec3::Zero(), 1.0, Material::flat(Vec3::Ones())));
  ASSERT_TRUE(h);
  EXPECT_NEAR(h->t, 4.0, 1e-12);
  EXPECT_NEAR((h->normal - Vec3(0, 0, -1)).norm(), 0.0, 1e-12);
  EXPECT_FALSE(h->inside);
}

TEST(Intersect, BoxSlab) {
  auto h = intersect(ray_from(Vec3(-5, 0, 0), Vec3(1, 0, 0)), make_box(Vec3::Zero(), Vec3::Ones(), Material::flat(Vec3::Ones())));
  ASSERT_TRUE(h);
  EXPECT_NEAR(h->t, 4.5, 1e-12);
  EXPECT_NEAR((h->normal - Vec3(-1, 0, 0)).norm(), 0.0, 1e-12);
}

TEST(Intersect, MissesTangentOffset) {
  EXPECT_FALSE(intersect(ray_from(Vec3(0, 2, -5), Vec3(0, 0, 1)), make_sphere(Vec3::Zero(), 1.0, Material::flat(Vec3::Ones()))));
  EXPECT_FALSE(intersect(ray_from(Vec3(0, 0, -5), Vec3(0, 0, -1)), make_sphere(Vec3::Zero(), 1.0, Material::flat(Vec3::Ones()))));
}

TEST(Intersect, InsideHitFacesInward) {
  auto h = intersect(ray_from(Vec3(0.2, 0, 0), Vec3(1, 0, 0)),
                     make_box(Vec3::Zero(), Vec3::Constant(2.0), Material::flat(Vec3::Ones()), true));
  ASSERT_TRUE(h);
  EXPECT_NEAR(h->t, 0.8, 1e-12);
  EXPECT_TRUE(h->inside);
  EXPECT_NEAR((h->normal - Vec3(-1, 0, 0)).norm(), 0.0, 1e-12);
}

TEST(Intersect, ScaledAndTranslatedSphere) {
  auto h = intersect(ray_from(Vec3(1, 1, 10), Vec3(0, 0, -1)), make_sphere(Vec3(1, 1, 2), 0.5, Material::flat(Vec3::Ones())));
  ASSERT_TRUE(h);
  EXPECT_NEAR(h->t, 7.5, 1e-12);
}

TEST(Intersect, PlaneFromBothSides) {
  Primitive p = make_plane(Vec3(0, 0, -1), Material::flat(Vec3::Ones()));
  auto a = intersect(ray_from(Vec3(0, 0, 3), Vec3(0, 0, -1)), p);
  auto b = intersect(ray_from(Vec3(0, 0, -3), Vec3(0, 0, 1)), p);
  ASSERT_TRUE(a && b);
  EXPECT_NEAR(a->t, 4.0, 1e-12);
  EXPECT_NEAR(b->t, 2.0, 1e-12);
  EXPECT_FALSE(intersect(ray_from(Vec3(0, 0, 3), Vec3(1, 0, 0)), p));
}

TEST(GroundTruth, EmptyLevelIsBackground) {
  SceneSpec s = single_level({}, Vec3::Ones());
  GroundTruth gt = render_ground_truth(camera_at(s, Vec3(0, 0, 5)), s);
  for (double v : gt.image.rgb) EXPECT_EQ(v, 1.0);
  for (double d : gt.depth.values) EXPECT_TRUE(std::isinf(d));
}

TEST(GroundTruth, LambertAtTheFrontPole) {
  const Vec3 red(0.8, 0.1, 0.1);
  SceneSpec s = single_level({make_sphere(Vec3::Zero(), 1.0, Material::flat(red))}, Vec3::Zero());
  GroundTruth gt = render_ground_truth(camera_at(s, Vec3(0, 0, 5)), s);
  // Normal (0,0,1) at the pole facing the camera; light toward (0.3,0.5,0.8).
  const double diffuse = 0.8 / std::sqrt(0.3 * 0.3 + 0.5 * 0.5 + 0.8 * 0.8);
  const Vec3 want = red * (0.2 + 0.8 * diffuse);
  EXPECT_NEAR((gt.image.get(4, 4) - want).norm(), 0.0, 1e-12);
  EXPECT_NEAR(gt.depth.values[4 * 9 + 4], 4.0, 1e-9);
}

TEST(GroundTruth, CameraInsideSolidThrows) {
  SceneSpec s = single_level({make_sphere(Vec3::Zero(), 1.0, Material::flat(Vec3::Ones()))}, Vec3::Zero());
  EXPECT_THROW(render_ground_truth(camera_at(s, Vec3(0.1, 0, 0), Vec3(1, 0, 0)), s), std::invalid_argument);
}

TEST(Materials, CheckerAlternatesWithPeriod) {
  const Vec3 a(1, 0, 0), b(0, 0, 1);
  Material m = Material::checker(a, b, 2.0);
  auto at = [&](double u, double v) {
    Hit h;
    h.uv = Eigen::Vector2d(u, v);
    return albedo(m, h, PrimitiveKind::kPlane);
  };
  EXPECT_EQ(at(0.1, 0.1), a);
  EXPECT_EQ(at(1.1, 0.1), b);
  EXPECT_EQ(at(2.1, 0.1), a);
  EXPECT_EQ(at(3.1, 0.1), b);
  EXPECT_EQ(at(1.1, 1.1), a);
  EXPECT_EQ(at(-0.1, 0.1), b);
}

TEST(Materials, CheckerPlaneRendersAlternatingCells) {
  // Straight down onto z = 0: image x follows world x.
  SceneSpec s = single_level({make_plane(Vec3::Zero(), Material::checker(Vec3(1, 1, 1), Vec3(0, 0, 0), 1.0))}, Vec3(0.5, 0.5, 0.5), 41);
  s.light_direction = Vec3(0, 0, 1);
  s.ambient = 0.0;
  Camera cam = camera_at(s, Vec3(0.01, 0.01, 3));
  cam.pose = Mat4::Identity();
  cam.pose.block<3, 1>(0, 3) = Vec3(0.01, 0.01, 3);
  GroundTruth gt = render_ground_truth(cam, s);
  std::vector<double> row;
  for (int x = 0; x < 41; ++x) row.push_back(gt.image.get(x, 20)[0]);
  int flips = 0;
  for (std::size_t i = 1; i < row.size(); ++i) flips += row[i] != row[i - 1];
  // The view spans 2 * 3 * tan(20 deg) ~ 2.18 world units: 4 to 5 half-unit cells.
  EXPECT_GE(flips, 3);
  EXPECT_LE(flips, 5);
  for (double v : row) EXPECT_TRUE(v == 0.0 || v == 1.0);
}

TEST(Materials, GradientBlendsAlongLocalZ) {
  Material m = Material::gradient(Vec3(0, 0, 0), Vec3(1, 1, 1));
  Hit h;
  h.local = Vec3(0, 0, -1);
  EXPECT_EQ(albedo(m, h, PrimitiveKind::kSphere), Vec3(0, 0, 0));
  h.local = Vec3(0, 0, 0);
  EXPECT_EQ(albedo(m, h, PrimitiveKind::kSphere), Vec3(0.5, 0.5, 0.5));
}

TEST(Poses, HemisphereShellAndLookAt) {
  SceneSpec s = make_preset("two-level", 8);
  std::mt19937_64 rng(1);
  for (const Camera& c : sample_poses(s, 0, rng)) {
    const Vec3 p = c.position();
    EXPECT_GE(p.z(), 0.0);
    EXPECT_NEAR(p.norm(), 3.5, 1e-9);
    EXPECT_NEAR(c.forward().dot((-p).normalized()), 1.0, 1e-9);
    EXPECT_GT(c.t_near, 0.0);
    EXPECT_GT(c.t_far, c.t_near);
  }
}

TEST(Poses, DeterministicForASeed) {
  SceneSpec s = make_preset("six-level", 8);
  for (std::size_t l = 0; l < s.levels.size(); ++l) {
    std::mt19937_64 a(9), b(9);
    std::vector<Camera> x = sample_poses(s, l, a), y = sample_poses(s, l, b);
    ASSERT_EQ(x.size(), y.size());
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(x[i].pose, y[i].pose);
  }
}

// Equal-area cells: 8 longitude sectors times 4 bands of equal height in z.
TEST(Poses, UniformOverTheShell) {
  const int kSamples = 10000, kLon = 8, kLat = 4;
  for (ShellKind kind : {ShellKind::kHemisphere, ShellKind::kSphere}) {
    PoseSampler s{kind, Vec3(1, -2, 0.5), 2.0, 0.0, 0.5 * std::numbers::pi};
    std::mt19937_64 rng(2024);
    std::vector<int> counts(kLon * kLat, 0);
    const double z_lo = kind == ShellKind::kHemisphere ? 0.0 : -1.0;
    for (const Vec3& p : sample_positions(s, kSamples, rng)) {
      const Vec3 q = (p - s.center) / s.radius;
      const double lon = std::atan2(q.y(), q.x()) + std::numbers::pi;
      const int i = std::min(kLon - 1, static_cast<int>(lon / (2 * std::numbers::pi) * kLon));
      const int j = std::min(kLat - 1, static_cast<int>((q.z() - z_lo) / (1.0 - z_lo) * kLat));
      ++counts[static_cast<std::size_t>(i * kLat + j)];
    }
    const double expected = static_cast<double>(kSamples) / counts.size();
    double chi2 = 0;
    for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
    boost::math::chi_squared dist(static_cast<double>(counts.size() - 1));
    EXPECT_GT(1.0 - boost::math::cdf(dist, chi2), 0.01) << shell_name(kind) << " chi2 " << chi2;
  }
}

TEST(Poses, ElevationBandIsRespected) {
  PoseSampler s{ShellKind::kHemisphere, Vec3::Zero(), 1.0, 0.2, 0.9};
  std::mt19937_64 rng(3);
  for (const Vec3& p : sample_positions(s, 2000, rng)) {
    const double el = std::asin(p.z());
    EXPECT_GE(el, 0.2 - 1e-12);
    EXPECT_LE(el, 0.9 + 1e-12);
  }
  PoseSampler bad = s;
  bad.radius = 0;
  EXPECT_THROW(sample_positions(bad, 1, rng), std::invalid_argument);
}

TEST(Presets, NestingAndShellsHold) {
  for (const std::string& name : preset_names()) {
    SceneSpec s = make_preset(name, 8);
    EXPECT_NO_THROW(check_nesting(s)) << name;
    for (std::size_t l = 0; l < s.levels.size(); ++l) {
      std::mt19937_64 rng(l + 1);
      for (const Camera& c : sample_poses(s, l, rng)) {
        const Vec3 p = c.position();
        EXPECT_NEAR((p - s.levels[l].poses.center).norm(), s.levels[l].poses.radius, 1e-9);
        for (const Primitive* prim : s.all_primitives()) {
          if (!prim->hollow) EXPECT_FALSE(prim->contains(p)) << name << " level " << l;
        }
        if (l > 0) {
          const Primitive* shell = enclosing_shell(s, l);
          ASSERT_NE(shell, nullptr);
          EXPECT_TRUE(shell->contains(p));
        }
        EXPECT_LT(c.t_near, c.t_far);
      }
    }
  }
}

TEST(Presets, BrokenNestingIsRejected) {
  SceneSpec s = make_preset("two-level", 8);
  s.levels[1].poses.radius = 1.5;  // pokes through the box
  EXPECT_THROW(check_nesting(s), std::invalid_argument);
  EXPECT_THROW(make_preset("no-such-scene", 8), std::invalid_argument);
}

TEST(Presets, InnerLevelsAreHiddenFromOuterCameras) {
  SceneSpec s = make_preset("two-level", 16);
  std::mt19937_64 rng(5);
  const Camera c = sample_poses(s, 0, rng).front();
  GroundTruth gt = render_ground_truth(c, s);
  const Primitive& box = s.levels[0].primitives[0];
  for (int y = 0; y < 16; ++y) {
    for (int x = 0; x < 16; ++x) {
      const double d = gt.depth.values[std::size_t(y) * 16 + x];
      if (!std::isfinite(d)) continue;
      const Vec3 hit = generate_ray(c, x, y).at(d);
      EXPECT_LT(box.surface_distance(hit), 1e-6);
    }
  }
}
