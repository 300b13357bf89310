#pragma once

// Dataset generation and the JSON manifest.
//
// manifest.json:
//   format        "strata-dataset"
//   version       1
//   scene         scene (preset) name
//   seed          generator seed
//   width, height, focal
//   backgrounds   one [r, g, b] per level
//   frames        records sorted by (level, split, index):
//                 id, image, depth (paths relative to the manifest),
//                 level, split ("train" | "val" | "test"), index,
//                 pose (16 numbers, row-major camera-to-world), near, far

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "strata/image.hpp"
#include "strata/parallel.hpp"
#include "strata/scene.hpp"

namespace strata {

inline constexpr int kManifestVersion = 1;
inline const char* const kSplitNames[] = {"train", "val", "test"};

struct FrameRecord {
  std::string id;
  std::string image;
  std::string depth;
  int level = 0;
  std::string split;
  int index = 0;
  Mat4 pose = Mat4::Identity();
  double t_near = 0.0;
  double t_far = 1.0;
};

struct DatasetManifest {
  int version = kManifestVersion;
  std::string scene;
  std::uint64_t seed = 0;
  int width = 0;
  int height = 0;
  double focal = 0.0;
  std::vector<Vec3> backgrounds;
  std::vector<FrameRecord> frames;
  /// Directory holding the manifest; frame paths are relative to it.
  std::filesystem::path root;

  int num_levels() const { return static_cast<int>(backgrounds.size()); }

  Camera camera(const FrameRecord& f) const {
    Camera c;
    c.width = width;
    c.height = height;
    c.focal = focal;
    c.pose = f.pose;
    c.t_near = f.t_near;
    c.t_far = f.t_far;
    c.level = f.level;
    return c;
  }

  std::vector<const FrameRecord*> select(const std::string& split, int level = -1) const {
    std::vector<const FrameRecord*> out;
    for (const auto& f : frames) {
      if (f.split == split && (level < 0 || f.level == level)) out.push_back(&f);
    }
    return out;
  }
};

inline nlohmann::json manifest_to_json(const DatasetManifest& m) {
  nlohmann::json j;
  j["format"] = "strata-dataset";
  j["version"] = m.version;
  j["scene"] = m.scene;
  j["seed"] = m.seed;
  j["width"] = m.width;
  j["height"] = m.height;
  j["focal"] = m.focal;
  j["backgrounds"] = nlohmann::json::array();
  for (const Vec3& b : m.backgrounds) j["backgrounds"].push_back({b[0], b[1], b[2]});
  j["frames"] = nlohmann::json::array();
  for (const auto& f : m.frames) {
    std::vector<double> pose(16);
    for (int r = 0; r < 4; ++r) {
      for (int c = 0; c < 4; ++c) pose[static_cast<std::size_t>(4 * r + c)] = f.pose(r, c);
    }
    j["frames"].push_back({{"id", f.id},       {"image", f.image}, {"depth", f.depth}, {"level", f.level},
                           {"split", f.split}, {"index", f.index}, {"pose", pose},     {"near", f.t_near},
                           {"far", f.t_far}});
  }
  return j;
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "strata-dataset") throw std::runtime_error("not a dataset manifest");
  DatasetManifest m;
  m.version = j.at("version").get<int>();
  if (m.version != kManifestVersion) {
    throw std::runtime_error("unsupported manifest version " + std::to_string(m.version));
  }
  m.scene = j.at("scene").get<std::string>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.width = j.at("width").get<int>();
  m.height = j.at("height").get<int>();
  m.focal = j.at("focal").get<double>();
  for (const auto& b : j.at("backgrounds")) m.backgrounds.emplace_back(b.at(0), b.at(1), b.at(2));
  for (const auto& jf : j.at("frames")) {
    FrameRecord f;
    f.id = jf.at("id").get<std::string>();
    f.image = jf.at("image").get<std::string>();
    f.depth = jf.at("depth").get<std::string>();
    f.level = jf.at("level").get<int>();
    f.split = jf.at("split").get<std::string>();
    f.index = jf.at("index").get<int>();
    const auto pose = jf.at("pose").get<std::vector<double>>();
    if (pose.size() != 16) throw std::runtime_error("frame " + f.id + ": pose must have 16 entries");
    for (int r = 0; r < 4; ++r) {
      for (int c = 0; c < 4; ++c) f.pose(r, c) = pose[static_cast<std::size_t>(4 * r + c)];
    }
    f.t_near = jf.at("near").get<double>();
    f.t_far = jf.at("far").get<double>();
    if (f.level < 0 || f.level >= m.num_levels()) {
      throw std::runtime_error("frame " + f.id + ": level " + std::to_string(f.level) + " out of range");
    }
    m.frames.push_back(std::move(f));
  }
  return m;
}

inline std::filesystem::path manifest_path(const std::filesystem::path& p) {
  return std::filesystem::is_directory(p) ? p / "manifest.json" : p;
}

/// Reads a manifest from a file or from a dataset directory.
inline DatasetManifest read_manifest(const std::filesystem::path& path) {
  const auto file = manifest_path(path);
  if (!std::filesystem::exists(file)) throw std::runtime_error("manifest not found: " + path.string());
  std::ifstream in(file);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed manifest " + file.string() + ": " + e.what());
  }
  DatasetManifest m = manifest_from_json(j);
  m.root = file.parent_path();
  return m;
}

inline void write_manifest(const DatasetManifest& m, const std::filesystem::path& dir) {
  write_file(dir / "manifest.json", manifest_to_json(m).dump(2) + "\n");
}

/// Per-level generator seeded from (seed, level).
inline std::mt19937_64 level_rng(std::uint64_t seed, std::size_t level) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(level), 0x5eedu};
  return std::mt19937_64(seq);
}

/// Renders every frame of every level and split, writes images/ and depth/
/// plus manifest.json under out_dir. Output is a pure function of
/// (scene, seed).
inline DatasetManifest write_dataset(const SceneSpec& scene, const std::filesystem::path& out_dir,
                                     std::uint64_t seed) {
  check_nesting(scene);
  DatasetManifest m;
  m.scene = scene.name;
  m.seed = seed;
  m.width = scene.width;
  m.height = scene.height;
  m.focal = scene.focal;
  m.root = out_dir;
  std::vector<Camera> cams;
  for (std::size_t l = 0; l < scene.levels.size(); ++l) {
    m.backgrounds.push_back(scene.levels[l].background);
    std::mt19937_64 rng = level_rng(seed, l);
    std::vector<Camera> level_cams = sample_poses(scene, l, rng);
    const SplitCounts& c = scene.levels[l].counts;
    const int bounds[3] = {c.train, c.train + c.val, c.total()};
    for (int i = 0; i < c.total(); ++i) {
      const int s = i < bounds[0] ? 0 : (i < bounds[1] ? 1 : 2);
      const int index = s == 0 ? i : i - bounds[s - 1];
      char id[64];
      std::snprintf(id, sizeof id, "L%zu_%s_%03d", l, kSplitNames[s], index);
      FrameRecord f;
      f.id = id;
      f.image = std::string("images/") + id + ".ppm";
      f.depth = std::string("depth/") + id + ".pfm";
      f.level = static_cast<int>(l);
      f.split = kSplitNames[s];
      f.index = index;
      f.pose = level_cams[static_cast<std::size_t>(i)].pose;
      f.t_near = level_cams[static_cast<std::size_t>(i)].t_near;
      f.t_far = level_cams[static_cast<std::size_t>(i)].t_far;
      m.frames.push_back(f);
      cams.push_back(level_cams[static_cast<std::size_t>(i)]);
    }
  }
  std::filesystem::create_directories(out_dir);
  if (!m.frames.empty()) {
    std::filesystem::create_directories(out_dir / "images");
    std::filesystem::create_directories(out_dir / "depth");
  }
  parallel_for(m.frames.size(), [&](std::size_t i) {
    GroundTruth gt = render_ground_truth(cams[i], scene);
    for (double& d : gt.depth.values) {
      if (!std::isfinite(d)) d = 0.0;  // no hit
    }
    write_ppm(out_dir / m.frames[i].image, gt.image);
    write_pfm(out_dir / m.frames[i].depth, gt.depth);
  });
  write_manifest(m, out_dir);
  return m;
}

/// Loads the RGB image of a frame.
inline Image load_frame(const DatasetManifest& m, const FrameRecord& f) {
  Image img = read_ppm(m.root / f.image);
  if (img.width != m.width || img.height != m.height) {
    throw std::runtime_error("image " + f.image + " does not match the manifest intrinsics");
  }
  return img;
}

}  // namespace strata
