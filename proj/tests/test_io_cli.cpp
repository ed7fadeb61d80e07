#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "eolt/config.hpp"
#include "eolt/errors.hpp"
#include "eolt/io.hpp"
#include "helpers.hpp"

using namespace eolt;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("eolt_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_bytes(const fs::path& p, const std::string& bytes) {
  std::ofstream(p, std::ios::binary) << bytes;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(EOLT_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("PPM load and save") {
  const fs::path dir = scratch("ppm");
  write_bytes(dir / "white.ppm", "P6\n2 2\n255\n" + std::string(12, '\xff'));
  const auto white = load_ppm(dir / "white.ppm");
  CHECK(white.pixels.shape() == Shape{3, 2, 2});
  for (double v : white.pixels.values()) CHECK(v == 1.0);

  std::string payload;
  for (int i = 0; i < 3 * 5 * 4; ++i) payload.push_back(static_cast<char>((i * 37) % 256));
  const std::string original = "P6\n5 4\n255\n" + payload;
  write_bytes(dir / "a.ppm", original);
  save_ppm(load_ppm(dir / "a.ppm").pixels, dir / "b.ppm");
  CHECK(slurp(dir / "b.ppm") == original);

  CHECK(quantize_byte(0.5) == 128);
  save_ppm(Tensor({3, 1, 1}, 0.5), dir / "half.ppm");
  CHECK(load_ppm(dir / "half.ppm").pixels[0] == doctest::Approx(0.50196).epsilon(1e-5));

  Rng rng(1);
  const Tensor x = eolt::testing::random_tensor({3, 7, 9}, rng);
  save_ppm(x, dir / "r.ppm");
  CHECK(max_abs(load_ppm(dir / "r.ppm").pixels - x) <= 1.0 / 510 + 1e-12);

  write_bytes(dir / "bad.ppm", "P5\n2 2\n255\n" + std::string(4, '\0'));
  CHECK_THROWS_AS(load_ppm(dir / "bad.ppm"), FormatError);
  write_bytes(dir / "short.ppm", "P6\n2 2\n255\n" + std::string(5, '\0'));
  CHECK_THROWS_AS(load_ppm(dir / "short.ppm"), FormatError);
  fs::remove_all(dir);
}

TEST_CASE("synthetic images") {
  const auto a = synth_images(32, 32, 32, 5);
  const auto b = synth_images(32, 32, 32, 5);
  REQUIRE(a.size() == 32);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].pixels == b[i].pixels);
    const Tensor& p = a[i].pixels;
    const double m = mean(p);
    double var = 0.0;
    for (double v : p.values()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
      var += (v - m) * (v - m);
    }
    CHECK(std::sqrt(var / p.size()) > 0.02);
  }
  CHECK_FALSE(synth_images(1, 32, 32, 6)[0].pixels == a[0].pixels);
}

TEST_CASE("checkpoint file round trip") {
  const fs::path dir = scratch("ckpt");
  Checkpoint c;
  c.fingerprint = 0x1234abcdULL;
  c.entries = {{"a.weight", Tensor({2, 2}, 0.25)}, {"b", Tensor::vector({1, -2, 3})}};
  save_checkpoint(dir / "c.ckpt", c);
  const auto r = load_checkpoint(dir / "c.ckpt");
  CHECK(r.fingerprint == c.fingerprint);
  REQUIRE(r.entries.size() == 2);
  CHECK(r.entries[0].first == "a.weight");
  CHECK(r.entries[1].second == c.entries[1].second);
  fs::remove_all(dir);
}

TEST_CASE("config parse and serialise round trip") {
  ExperimentConfig cfg;
  cfg.seed = 17;
  cfg.data.count = 5;
  cfg.trainer.cap = 1.0 / 6;
  cfg.trainer.lr = 0.0123;
  cfg.transforms = {TransformId::jpeg, TransformId::swirl};
  cfg.split = SplitKind::intra;
  cfg.backbone = Backbone::small_cnn;
  cfg.sweep_values = {"1/10", "1/6"};
  const std::string text = cfg.to_ini();
  const auto back = ExperimentConfig::parse(text);
  CHECK(back.to_ini() == text);
  CHECK(back.trainer.cap == cfg.trainer.cap);
  CHECK(back.fingerprint() == cfg.fingerprint());
  CHECK(ExperimentConfig{}.fingerprint() != cfg.fingerprint());
}

TEST_CASE("config value parsing and rejection") {
  const auto cfg = ExperimentConfig::parse("seed = 4\n[trainer]\ncap = 1/6\n[catalog]\ntransforms = jpeg, hflip\n");
  CHECK(cfg.seed == 4);
  CHECK(cfg.trainer.cap == 1.0 / 6);
  CHECK(cfg.transforms == std::vector<TransformId>{TransformId::jpeg, TransformId::hflip});
  CHECK_THROWS_AS(ExperimentConfig::parse("[trainer]\ncapp = 0.2\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse("[trainers]\ncap = 0.2\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse("[catalog]\ntransforms = sepia\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse("[attack]\nepsilon = lots\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse("[trainer]\ncap = 1/0\n"), ConfigError);
}

TEST_CASE("cli exit codes") {
  const fs::path dir = scratch("cli");
  write_bytes(dir / "ok.ini", slurp(fs::path(EOLT_CONFIG_DIR) / "smoke.ini"));
  write_bytes(dir / "typo.ini", "[trainer]\nepochz = 3\n");
  const std::string out = " --output " + (dir / "out").string();

  CHECK(run_cli("") == 1);
  CHECK(run_cli("frobnicate") == 1);
  CHECK(run_cli("check-gradients --bogus-flag") == 1);
  CHECK(run_cli("eval-matrix --config " + (dir / "typo.ini").string() + out) == 1);
  CHECK(run_cli("eval-matrix --config " + (dir / "missing.ini").string() + out) == 1);
  CHECK(run_cli("attack --method dfrap --config " + (dir / "ok.ini").string() + out) == 1);
  CHECK(run_cli("attack --method eolt --policy " + (dir / "none.ckpt").string() + " --config " +
                (dir / "ok.ini").string() + out) == 2);
  CHECK(run_cli("attack --method pgd --config " + (dir / "ok.ini").string() + out) == 0);
  CHECK(fs::exists(dir / "out" / "attack" / "loss_trace.csv"));
  CHECK(fs::exists(dir / "out" / "config.ini"));
  fs::remove_all(dir);
}

TEST_CASE("shipped configs load and round trip") {
  for (const char* name : {"smoke.ini", "desk.ini", "full.ini"}) {
    CAPTURE(name);
    const auto cfg = ExperimentConfig::load(fs::path(EOLT_CONFIG_DIR) / name);
    CHECK(ExperimentConfig::parse(cfg.to_ini()).to_ini() == cfg.to_ini());
  }
  CHECK(ExperimentConfig::parse("[catalog]\nsplit = all-seen\n").split == SplitKind::all_seen);
}
