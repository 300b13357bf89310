#include <filesystem>

#include <gtest/gtest.h>

#include "strata/dataset.hpp"
#include "test_util.hpp"

using namespace strata;
namespace fs = std::filesystem;

namespace {

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = read_file(e.path());
  }
  return out;
}

std::size_t count_files(const fs::path& dir, const std::string& ext) {
  if (!fs::exists(dir)) return 0;
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(dir)) n += e.path().extension() == ext;
  return n;
}

}  // namespace

TEST(WriteDataset, SameSeedIsByteIdentical) {
  const fs::path dir = test::scratch_dir();
  for (const std::string& name : preset_names()) {
    SceneSpec s = make_preset(name, 12);
    write_dataset(s, dir / (name + "_a"), 7);
    write_dataset(s, dir / (name + "_b"), 7);
    auto a = tree(dir / (name + "_a")), b = tree(dir / (name + "_b"));
    EXPECT_FALSE(a.empty());
    EXPECT_TRUE(a == b) << name;
  }
}

TEST(WriteDataset, DifferentSeedsDiffer) {
  const fs::path dir = test::scratch_dir();
  SceneSpec s = make_preset("two-level", 8);
  write_dataset(s, dir / "a", 1);
  write_dataset(s, dir / "b", 2);
  EXPECT_NE(read_file(dir / "a" / "manifest.json"), read_file(dir / "b" / "manifest.json"));
}

TEST(WriteDataset, ThreeLevelsOfThirtyFifteenFifteen) {
  const fs::path dir = test::scratch_dir();
  SceneSpec s = make_preset("cube-sphere-monkey-lite", 6);
  for (auto& l : s.levels) l.counts = {30, 15, 15};
  DatasetManifest m = write_dataset(s, dir, 3);
  EXPECT_EQ(m.frames.size(), 180u);
  EXPECT_EQ(count_files(dir / "images", ".ppm"), 180u);
  EXPECT_EQ(count_files(dir / "depth", ".pfm"), 180u);
  DatasetManifest r = read_manifest(dir);
  EXPECT_EQ(r.frames.size(), 180u);
  EXPECT_EQ(r.select("train").size(), 90u);
  EXPECT_EQ(r.select("test", 2).size(), 15u);
  EXPECT_EQ(r.num_levels(), 3);
}

TEST(WriteDataset, ZeroCountsWriteNoImages) {
  const fs::path dir = test::scratch_dir();
  SceneSpec s = make_preset("two-level", 8);
  for (auto& l : s.levels) l.counts = {0, 0, 0};
  DatasetManifest m = write_dataset(s, dir, 3);
  EXPECT_TRUE(m.frames.empty());
  EXPECT_EQ(count_files(dir / "images", ".ppm"), 0u);
  EXPECT_TRUE(read_manifest(dir / "manifest.json").frames.empty());
}

TEST(WriteDataset, FramesMatchGroundTruthRender) {
  const fs::path dir = test::scratch_dir();
  SceneSpec s = make_preset("two-level", 10);
  DatasetManifest m = read_manifest(write_dataset(s, dir, 4).root);
  for (const FrameRecord* f : {&m.frames.front(), &m.frames.back()}) {
    Image img = load_frame(m, *f);
    GroundTruth gt = render_ground_truth(m.camera(*f), s);
    for (std::size_t i = 0; i < img.rgb.size(); ++i) EXPECT_NEAR(img.rgb[i], gt.image.rgb[i], 0.5 / 255 + 1e-12);
  }
}

TEST(Manifest, JsonRoundTrip) {
  DatasetManifest m;
  m.scene = "s";
  m.seed = 99;
  m.width = 4;
  m.height = 3;
  m.focal = 2.5;
  m.backgrounds = {Vec3(1, 1, 1), Vec3(0, 0.5, 0)};
  FrameRecord f;
  f.id = "L1_val_002";
  f.image = "images/L1_val_002.ppm";
  f.depth = "depth/L1_val_002.pfm";
  f.level = 1;
  f.split = "val";
  f.index = 2;
  f.pose = look_at(Vec3(0.1, 0.2, 0.3), Vec3(-1, 0.5, 2));
  f.t_near = 0.123456789012345;
  f.t_far = 9.87654321;
  m.frames = {f};
  DatasetManifest r = manifest_from_json(nlohmann::json::parse(manifest_to_json(m).dump()));
  EXPECT_EQ(r.scene, "s");
  EXPECT_EQ(r.seed, 99u);
  EXPECT_EQ(r.backgrounds, m.backgrounds);
  ASSERT_EQ(r.frames.size(), 1u);
  EXPECT_EQ(r.frames[0].pose, f.pose);
  EXPECT_EQ(r.frames[0].t_near, f.t_near);
  EXPECT_EQ(r.frames[0].split, "val");
}

TEST(Manifest, MissingFileIsReported) {
  const fs::path dir = test::scratch_dir();
  try {
    read_manifest(dir / "nope");
    FAIL() << "expected an exception";
  } catch (const std::runtime_error& e) {
    EXPECT_EQ(std::string(e.what()), "manifest not found: " + (dir / "nope").string());
  }
}

TEST(Manifest, RejectsOtherVersions) {
  DatasetManifest m;
  nlohmann::json j = manifest_to_json(m);
  j["version"] = 2;
  EXPECT_THROW(manifest_from_json(j), std::runtime_error);
}
