#pragma once

// The `strata` command line: gen, train, render, eval, ablate, selfcheck.
//
// Exit codes: 0 success, 1 usage error, 2 runtime failure.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "strata/checkpoint.hpp"
#include "strata/config.hpp"
#include "strata/dataset.hpp"
#include "strata/metrics.hpp"
#include "strata/renderer.hpp"
#include "strata/scene.hpp"
#include "strata/selfcheck.hpp"
#include "strata/training.hpp"

namespace strata {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitFailure = 2;
inline constexpr int kOrbitPoses = 60;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace cli {

inline void write_run_config(const RunConfig& c, const std::filesystem::path& dir, std::ostream& log) {
  const std::string text = kv::format(c.to_entries());
  log << "# resolved configuration\n" << text;
  std::filesystem::create_directories(dir);
  write_file(dir / "run_config.txt", text);
}

inline std::string require(const std::string& value, const char* key) {
  if (value.empty()) throw UsageError(std::string("missing required option: ") + key);
  return value;
}

inline SamplingConfig sampling(const RunConfig& c) { return c.train.sampling; }

inline int gen(const RunConfig& c, std::ostream& log) {
  SceneSpec scene = make_preset(c.preset, c.resolution);
  write_run_config(c, c.out, log);
  DatasetManifest m = write_dataset(scene, c.out, c.train.seed);
  log << "wrote " << m.frames.size() << " frames of '" << m.scene << "' to " << c.out << "\n";
  return kExitOk;
}

inline int train_cmd(const RunConfig& c, std::ostream& log) {
  DatasetManifest m = read_manifest(require(c.dataset, "dataset"));
  write_run_config(c, c.out, log);
  log << kLogHeader << "\n";
  TrainResult r = train(m, c.train, c.out, [&](const LogRecord& rec) { log << format_log_row(rec) << "\n" << std::flush; });
  log << "checkpoint: " << (std::filesystem::path(c.out) / "checkpoint.bin").string() << "\n";
  return kExitOk;
}

/// Cameras on the training shell of `level` at a fixed elevation.
inline std::vector<Camera> orbit_cameras(const SceneSpec& scene, std::size_t level) {
  const PoseSampler& s = scene.levels.at(level).poses;
  const double elevation = s.kind == ShellKind::kHemisphere ? 0.5 * (s.min_elevation + s.max_elevation)
                           : s.kind == ShellKind::kCircle   ? s.min_elevation
                                                            : 0.3;
  std::vector<Camera> cams;
  for (int i = 0; i < kOrbitPoses; ++i) {
    const double phi = 2.0 * std::numbers::pi * i / kOrbitPoses;
    const Vec3 eye = s.center + s.radius * Vec3(std::cos(elevation) * std::cos(phi),
                                                std::cos(elevation) * std::sin(phi), std::sin(elevation));
    Camera cam;
    cam.width = scene.width;
    cam.height = scene.height;
    cam.focal = scene.focal;
    cam.pose = look_at(eye, s.center);
    std::tie(cam.t_near, cam.t_far) = near_far(scene, level, eye);
    cam.level = static_cast<int>(level);
    cams.push_back(cam);
  }
  return cams;
}

inline int render_cmd(const RunConfig& c, std::ostream& log) {
  RadianceField field = load_checkpoint(require(c.checkpoint, "checkpoint"));
  const std::filesystem::path out = c.out;
  write_run_config(c, out, log);
  std::filesystem::create_directories(out / "images");
  std::filesystem::create_directories(out / "depth");
  std::vector<std::pair<std::string, Camera>> jobs;
  std::vector<Vec3> backgrounds;
  if (c.render_mode == "orbit") {
    SceneSpec scene = make_preset(c.preset, c.resolution);
    if (!c.dataset.empty()) {
      DatasetManifest m = read_manifest(c.dataset);
      scene = make_preset(m.scene, m.width);
    }
    const std::size_t level = static_cast<std::size_t>(std::max(c.level, 0));
    if (level >= scene.levels.size()) throw std::invalid_argument("level " + std::to_string(level) + " not in scene");
    int i = 0;
    for (const Camera& cam : orbit_cameras(scene, level)) {
      char id[32];
      std::snprintf(id, sizeof id, "orbit_L%zu_%03d", level, i++);
      jobs.emplace_back(id, cam);
      backgrounds.push_back(scene.levels[level].background);
    }
  } else {
    DatasetManifest m = read_manifest(require(c.dataset, "dataset"));
    for (const FrameRecord* f : m.select(c.split, c.level)) {
      jobs.emplace_back(f->id, m.camera(*f));
      backgrounds.push_back(m.backgrounds.at(static_cast<std::size_t>(f->level)));
    }
  }
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    RenderedImage img = render_image(field, jobs[i].second, backgrounds[i], sampling(c));
    write_ppm(out / "images" / (jobs[i].first + ".ppm"), img.image);
    write_pfm(out / "depth" / (jobs[i].first + ".pfm"), img.depth);
  }
  log << "rendered " << jobs.size() << " views to " << out.string() << "\n";
  return kExitOk;
}

inline int eval_cmd(const RunConfig& c, std::ostream& log) {
  RadianceField field = load_checkpoint(require(c.checkpoint, "checkpoint"));
  DatasetManifest m = read_manifest(require(c.dataset, "dataset"));
  write_run_config(c, c.out, log);
  EvalReport r = evaluate(field, m, c.split, sampling(c), c.level);
  write_report(r, c.out);
  log << format_summary(r);
  return kExitOk;
}

inline int ablate_cmd(const RunConfig& c, std::ostream& log) {
  DatasetManifest m = read_manifest(require(c.dataset, "dataset"));
  const std::filesystem::path out = c.out;
  write_run_config(c, out, log);
  std::ostringstream table;
  table << "variant,codebook_size,frames,psnr,ssim\n";
  bool finite = true;
  for (Variant v : c.variants()) {
    for (int size : c.ablate_codebook_sizes) {
      TrainConfig tc = c.train;
      tc.model.variant = v;
      tc.model.codebook_size = size;
      const std::string tag = std::string(variant_name(v)) + "_N" + std::to_string(size);
      log << "ablate " << tag << "\n" << std::flush;
      TrainResult r = train(m, tc, out / tag);
      EvalReport rep = evaluate(r.field, m, c.split, tc.sampling, c.level);
      write_report(rep, out / tag / "eval");
      finite = finite && std::isfinite(rep.total.psnr) && std::isfinite(rep.total.ssim);
      for (const auto& rec : r.log) finite = finite && std::isfinite(rec.loss_total);
      table << variant_name(v) << ',' << size << ',' << rep.total.frames << ',' << kv::number(rep.total.psnr) << ','
            << kv::number(rep.total.ssim) << '\n';
    }
  }
  write_file(out / "ablation.csv", table.str());
  log << table.str();
  if (!finite) throw std::runtime_error("ablation produced non-finite values");
  return kExitOk;
}

inline int selfcheck_cmd(std::ostream& log) {
  bool all = true;
  for (const CheckResult& r : run_selfcheck()) {
    log << (r.passed ? "PASS " : "FAIL ") << r.name << " (" << r.detail << ")\n";
    all = all && r.passed;
  }
  log << (all ? "selfcheck passed\n" : "selfcheck FAILED\n");
  return all ? kExitOk : kExitFailure;
}

}  // namespace cli

/// Entry point shared by the binary and the tests.
inline int run(int argc, const char* const* argv, std::ostream& log = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Stratified radiance fields: dataset generation, training, rendering and evaluation", "strata"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_help_all_flag("--help-all");

  std::string config_path;
  std::vector<std::string> sets;
  // Values given on the command line, as config entries, in flag order.
  struct Flag {
    const char* name;
    const char* key;
    const char* help;
    std::string value;
  };
  std::vector<Flag> flags = {
      {"--out", "out", "output directory", {}},
      {"--seed", "seed", "random seed", {}},
      {"--preset", "preset", "scene preset: two-level, cube-sphere-monkey-lite, six-level", {}},
      {"--variant", "variant", "model variant: full, D1, D2, D3, D4_vae, baseline", {}},
      {"--codebook-size", "codebook_size", "codebook rows N", {}},
      {"--iterations", "iterations", "training steps", {}},
      {"--resolution", "resolution", "image width and height for gen", {}},
      {"--level", "level", "restrict render/eval to one level", {}},
      {"--shared-codebook", "shared_codebook", "one codebook for all levels (true/false)", {}},
      {"--use-level-encoding", "use_level_encoding", "feed the encoded level to the latent encoder (true/false)", {}},
      {"--unbounded", "unbounded", "contract positions before encoding (true/false)", {}},
      {"--dataset", "dataset", "dataset directory or manifest.json", {}},
      {"--checkpoint", "checkpoint", "checkpoint file", {}},
      {"--split", "split", "train, val or test", {}},
      {"--mode", "render_mode", "render mode: split or orbit", {}},
  };
  app.add_option("--config", config_path, "configuration file (key = value lines)");
  for (Flag& f : flags) app.add_option(f.name, f.value, f.help);
  app.add_option("--set", sets, "override any configuration key: --set key=value");

  std::string command;
  for (const char* name : {"gen", "train", "render", "eval", "ablate", "selfcheck"}) {
    static const std::map<std::string, std::string> help = {
        {"gen", "render a procedural dataset"},
        {"train", "train a field on a dataset"},
        {"render", "render views from a checkpoint"},
        {"eval", "score a checkpoint on a dataset split"},
        {"ablate", "train and score every variant and codebook size"},
        {"selfcheck", "run built-in gradient, quantizer and rendering checks"},
    };
    app.add_subcommand(name, help.at(name))->callback([&command, name] { command = name; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, log, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (command == "selfcheck") return cli::selfcheck_cmd(log);
    kv::Entries overrides;
    for (const Flag& f : flags) {
      if (!f.value.empty()) overrides.emplace_back(f.key, f.value);
    }
    for (const std::string& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + s + "'");
      overrides.emplace_back(kv::trim(s.substr(0, eq)), kv::trim(s.substr(eq + 1)));
    }
    RunConfig config;
    try {
      config = parse_config(config_path, overrides);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    if (command == "gen") return cli::gen(config, log);
    if (command == "train") return cli::train_cmd(config, log);
    if (command == "render") return cli::render_cmd(config, log);
    if (command == "eval") return cli::eval_cmd(config, log);
    if (command == "ablate") return cli::ablate_cmd(config, log);
    throw UsageError("unknown command '" + command + "'");
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace strata
