#pragma once

// Run configuration: every option of every subcommand, loaded from a
// `key = value` file and then overridden by command-line values.

#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "strata/field.hpp"
#include "strata/kv.hpp"
#include "strata/training.hpp"

namespace strata {

struct RunConfig {
  // Dataset generation.
  std::string preset = "two-level";
  int resolution = 200;
  // Paths. Empty means "not given".
  std::string dataset;
  std::string checkpoint;
  std::string out = "out";
  // Render and eval.
  std::string split = "test";
  int level = -1;  // -1: all levels
  std::string render_mode = "split";  // split | orbit
  // Ablation sweep.
  std::string ablate_variants = "baseline,full,D1,D2,D3,D4_vae";
  std::vector<int> ablate_codebook_sizes = {512, 1024, 4096};
  // Training (includes the model and the seed).
  TrainConfig train;

  kv::Entries to_entries() const {
    kv::Entries e = {
        {"preset", preset},
        {"resolution", kv::number(resolution)},
        {"dataset", dataset},
        {"checkpoint", checkpoint},
        {"out", out},
        {"split", split},
        {"level", kv::number(level)},
        {"render_mode", render_mode},
        {"ablate_variants", ablate_variants},
        {"ablate_codebook_sizes", kv::int_list(ablate_codebook_sizes)},
    };
    for (auto& kvp : train.to_entries()) e.push_back(kvp);
    for (auto& kvp : train.model.to_entries()) e.push_back(kvp);
    return e;
  }

  /// Every accepted key, in output order.
  static std::vector<std::string> keys() {
    std::vector<std::string> k;
    for (const auto& [key, v] : RunConfig{}.to_entries()) k.push_back(key);
    return k;
  }

  void set(const std::string& key, const std::string& v) {
    if (key == "preset") preset = v;
    else if (key == "resolution") resolution = static_cast<int>(kv::to_int(key, v));
    else if (key == "dataset") dataset = v;
    else if (key == "checkpoint") checkpoint = v;
    else if (key == "out") out = v;
    else if (key == "split") split = v;
    else if (key == "level") level = static_cast<int>(kv::to_int(key, v));
    else if (key == "render_mode") render_mode = v;
    else if (key == "ablate_variants") ablate_variants = v;
    else if (key == "ablate_codebook_sizes") ablate_codebook_sizes = kv::to_int_list(key, v);
    else if (train.set(key, v) || train.model.set(key, v)) return;
    else throw std::invalid_argument(unknown_key_message(key));
  }

  void validate() const {
    train.validate();
    if (resolution < 1) throw std::invalid_argument("resolution must be >= 1");
    if (split != "train" && split != "val" && split != "test") {
      throw std::invalid_argument("split must be train, val or test (got '" + split + "')");
    }
    if (render_mode != "split" && render_mode != "orbit") {
      throw std::invalid_argument("render_mode must be split or orbit (got '" + render_mode + "')");
    }
    for (int n : ablate_codebook_sizes) {
      if (n < 1) throw std::invalid_argument("ablate_codebook_sizes entries must be >= 1");
    }
  }

  std::vector<Variant> variants() const {
    std::vector<Variant> out;
    std::istringstream in(ablate_variants);
    std::string item;
    while (std::getline(in, item, ',')) {
      item = kv::trim(item);
      if (!item.empty()) out.push_back(parse_variant(item));
    }
    return out;
  }

  static std::string nearest_key(const std::string& key) {
    std::string best;
    std::size_t best_d = std::numeric_limits<std::size_t>::max();
    for (const auto& k : keys()) {
      const std::size_t d = kv::edit_distance(key, k);
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    return best;
  }

  static std::string unknown_key_message(const std::string& key) {
    return "unknown config key '" + key + "' (did you mean '" + nearest_key(key) + "'?)";
  }
};

/// defaults <- file <- overrides. An empty path skips the file.
inline RunConfig parse_config(const std::filesystem::path& path, const kv::Entries& overrides = {}) {
  RunConfig c;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config not found: " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    for (const auto& [k, v] : kv::parse(ss.str(), path.string())) c.set(k, v);
  }
  for (const auto& [k, v] : overrides) c.set(k, v);
  c.validate();
  return c;
}

}  // namespace strata
