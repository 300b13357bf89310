#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "strata/cli.hpp"
#include "test_util.hpp"

using namespace strata;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "strata");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

/// Overrides that keep training runs tiny.
std::vector<std::string> tiny() {
  return {"--set", "trunk_width=16",    "--set", "trunk_depth=3",   "--set", "color_hidden=8",
          "--set", "position_bands=3",  "--set", "latent_dim=4",    "--set", "encoder_hidden=8",
          "--set", "decoder_hidden=8",  "--set", "rays_per_batch=16", "--set", "coarse_samples=6",
          "--set", "fine_samples=6",    "--set", "log_every=1"};
}

std::vector<std::string> concat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

std::size_t count_files(const fs::path& dir) {
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(dir)) n += e.is_regular_file();
  return n;
}

}  // namespace

TEST(Cli, GenWritesManifestAndImages) {
  const fs::path d = test::scratch_dir() / "d";
  Outcome r = invoke({"gen", "--preset", "two-level", "--seed", "7", "--out", d.string() + "/"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(d / "manifest.json"));
  EXPECT_EQ(count_files(d / "images"), 120u);
  EXPECT_TRUE(fs::exists(d / "run_config.txt"));
  EXPECT_NE(r.out.find("# resolved configuration"), std::string::npos);
  DatasetManifest m = read_manifest(d);
  EXPECT_EQ(m.seed, 7u);
  EXPECT_EQ(m.width, 200);
}

TEST(Cli, SelfcheckPasses) {
  Outcome r = invoke({"selfcheck"});
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(r.out.find("FAIL"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("selfcheck passed"), std::string::npos);
}

TEST(Cli, TrainWithMissingManifestFails) {
  const fs::path dir = test::scratch_dir();
  const std::string missing = (dir / "nowhere").string();
  Outcome r = invoke({"train", "--dataset", missing, "--out", (dir / "run").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("manifest not found: " + missing), std::string::npos) << r.err;
}

TEST(Cli, UsageErrors) {
  EXPECT_EQ(invoke({}).code, 1);
  EXPECT_EQ(invoke({"fly"}).code, 1);
  EXPECT_EQ(invoke({"gen", "--no-such-flag", "1"}).code, 1);
  Outcome typo = invoke({"gen", "--set", "codebok_size=4"});
  EXPECT_EQ(typo.code, 1);
  EXPECT_NE(typo.err.find("codebook_size"), std::string::npos);
  EXPECT_EQ(invoke({"gen", "--set", "novalue"}).code, 1);
  EXPECT_EQ(invoke({"train"}).code, 1);  // no dataset
  EXPECT_EQ(invoke({"--help"}).code, 0);
}

TEST(Cli, ConfigFileAndFlagPrecedence) {
  const fs::path dir = test::scratch_dir();
  write_file(dir / "run.cfg", "resolution = 6\npreset = six-level\n");
  Outcome r = invoke({"gen", "--config", (dir / "run.cfg").string(), "--resolution", "4", "--out",
                      (dir / "d").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  DatasetManifest m = read_manifest(dir / "d");
  EXPECT_EQ(m.width, 4);
  EXPECT_EQ(m.scene, "six-level");
}

TEST(Cli, GenIsReproducibleFromItsRunConfig) {
  const fs::path dir = test::scratch_dir();
  ASSERT_EQ(invoke({"gen", "--resolution", "6", "--seed", "3", "--out", (dir / "a").string()}).code, 0);
  // Rerun from the written config; only the output directory changes.
  ASSERT_EQ(invoke({"gen", "--config", (dir / "a" / "run_config.txt").string(), "--out", (dir / "b").string()}).code,
            0);
  for (const auto& e : fs::directory_iterator(dir / "a" / "images")) {
    EXPECT_EQ(read_file(e.path()), read_file(dir / "b" / "images" / e.path().filename()));
  }
}

TEST(Cli, TrainRenderEvalPipeline) {
  const fs::path dir = test::scratch_dir();
  const std::string data = (dir / "data").string(), run_dir = (dir / "run").string();
  ASSERT_EQ(invoke({"gen", "--resolution", "6", "--seed", "1", "--out", data}).code, 0);

  Outcome t = invoke(concat({"train", "--dataset", data, "--out", run_dir, "--iterations", "3",
                             "--shared-codebook=false", "--codebook-size", "8"},
                            tiny()));
  ASSERT_EQ(t.code, 0) << t.err;
  EXPECT_NE(t.out.find(kLogHeader), std::string::npos);
  const fs::path ckpt = fs::path(run_dir) / "checkpoint.bin";
  ASSERT_TRUE(fs::exists(ckpt));
  EXPECT_FALSE(load_checkpoint(ckpt).config().shared_codebook);
  EXPECT_TRUE(fs::exists(fs::path(run_dir) / "run_config.txt"));

  const std::vector<std::string> small_sampling = {"--set", "coarse_samples=6", "--set", "fine_samples=6"};
  Outcome e = invoke(concat({"eval", "--dataset", data, "--checkpoint", ckpt.string(), "--out",
                             (dir / "eval").string()},
                            small_sampling));
  ASSERT_EQ(e.code, 0) << e.err;
  EXPECT_NE(e.out.find("level 1"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "eval" / "frames.csv"));

  Outcome s = invoke(concat({"render", "--dataset", data, "--checkpoint", ckpt.string(), "--split", "val", "--level",
                             "1", "--out", (dir / "split").string()},
                            small_sampling));
  ASSERT_EQ(s.code, 0) << s.err;
  EXPECT_EQ(count_files(dir / "split" / "images"), 15u);
  EXPECT_EQ(count_files(dir / "split" / "depth"), 15u);

  Outcome o = invoke(concat({"render", "--mode", "orbit", "--dataset", data, "--checkpoint", ckpt.string(), "--level",
                             "0", "--out", (dir / "orbit").string()},
                            small_sampling));
  ASSERT_EQ(o.code, 0) << o.err;
  EXPECT_EQ(count_files(dir / "orbit" / "images"), 60u);
  Image first = read_ppm(dir / "orbit" / "images" / "orbit_L0_000.ppm");
  EXPECT_EQ(first.width, 6);
}

TEST(Cli, BadCheckpointIsRuntimeFailure) {
  const fs::path dir = test::scratch_dir();
  write_file(dir / "junk.bin", "not a checkpoint");
  Outcome r = invoke({"render", "--checkpoint", (dir / "junk.bin").string(), "--mode", "orbit", "--out",
                      (dir / "o").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("error:"), std::string::npos);
}

TEST(Cli, AblateEmitsOneRowPerCombination) {
  const fs::path dir = test::scratch_dir();
  const std::string data = (dir / "data").string();
  ASSERT_EQ(invoke({"gen", "--resolution", "4", "--seed", "2", "--out", data}).code, 0);
  Outcome a = invoke(concat({"ablate", "--dataset", data, "--out", (dir / "ab").string(), "--iterations", "2", "--set",
                             "ablate_codebook_sizes=4,8", "--set", "ablate_variants=baseline,full,D3,D4_vae"},
                            tiny()));
  ASSERT_EQ(a.code, 0) << a.err;
  std::istringstream csv(read_file(dir / "ab" / "ablation.csv"));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "variant,codebook_size,frames,psnr,ssim");
  int rows = 0;
  while (std::getline(csv, line)) rows += !line.empty();
  EXPECT_EQ(rows, 8);
}
