#include "doctest.h"

#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "pasyn/error.hpp"
#include "pasyn/eval/metrics.hpp"
#include "pasyn/run_config.hpp"
#include "pasyn/volume_io.hpp"

using namespace pasyn;
namespace fs = std::filesystem;

namespace {

struct RunResult {
  int code = -1;
  std::string err;
};

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("pasyn_cli_" + name);
  fs::remove_all(p);
  return p;
}

RunResult run(const std::string& args) {
  const fs::path err = fs::temp_directory_path() / "pasyn_cli_stderr.txt";
  const std::string cmd = std::string(PASYN_BIN) + " " + args + " 2> " + err.string() + " > /dev/null";
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(err);
  std::stringstream ss;
  ss << in.rdbuf();
  r.err = ss.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::map<std::string, std::string> tree_contents(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file() && e.path().filename() != "run.json")
      out[fs::relative(e.path(), root).string()] = slurp(e.path());
  return out;
}

std::size_t count_ext(const fs::path& dir, const std::string& prefix, const std::string& ext) {
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.rfind(prefix, 0) == 0 && e.path().extension() == ext) ++n;
  }
  return n;
}

bool last_line_is_error(const std::string& err, const std::string& kind) {
  std::string last, line;
  std::stringstream ss(err);
  while (std::getline(ss, line))
    if (!line.empty()) last = line;
  return last.rfind("error: kind=" + kind + " msg=\"", 0) == 0 && last.back() == '"';
}

const std::string kSmoke = std::string(" --config ") + PASYN_CONFIG_DIR + "/smoke.yaml";

}  // namespace

TEST_CASE("yaml overlay keeps defaults and rejects unknown keys") {
  RunConfig cfg;
  const std::string before = cfg.hash();
  cfg.merge(yaml_to_json("unet: {epochs: 3}\nsimulation:\n  photons: 5e3\n"));
  CHECK(cfg.unet_training().epochs == 3);
  CHECK(cfg.unet_training().batch_size == 4);
  CHECK(cfg.synthesis(shipped_spectra()).simulation.source.photon_count == 5000);
  CHECK(cfg.hash() != before);
  CHECK(cfg.hash().size() == 16);

  try {
    cfg.merge(yaml_to_json("unet: {epoch: 3}"));
    FAIL("unknown key accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kInvalidConfig);
    CHECK(std::string(e.what()).find("unet.epoch") != std::string::npos);
  }
  CHECK_THROWS_AS(cfg.merge(yaml_to_json("unet: 3")), Error);
  CHECK_THROWS_AS(cfg.merge(yaml_to_json("seed: abc")), Error);
  CHECK_THROWS_AS(cfg.set("novalue"), Error);
  CHECK_THROWS_AS(cfg.merge(yaml_to_json("experiment: {variants: [anno, nope]}")); (void)cfg.variants(), Error);
}

TEST_CASE("set overrides nested keys with YAML values") {
  RunConfig cfg;
  cfg.set("dataset.scale=0.5");
  cfg.set("experiment.classes=[0, 4]");
  cfg.set("gan.hyperparams.batch_size=5");
  CHECK(cfg.dataset_scale() == doctest::Approx(0.5));
  CHECK(cfg.rankings().size() == 2);
  CHECK(cfg.rankings()[1].tissue_class == 4);
  CHECK(cfg.gan().batch_size == 5);
  cfg.set("dataset.scale=2");
  CHECK_THROWS_AS((void)cfg.dataset_scale(), Error);
}

TEST_CASE("resolved tree reproduces its hash and derived settings") {
  RunConfig a;
  a.set("seed=42");
  a.set("unet.depth=3");
  RunConfig b;
  b.merge(a.tree());
  CHECK(a.hash() == b.hash());
  CHECK(b.unet().depth == 3);
  CHECK(b.unet().channels == 16);
  CHECK(b.unet().image == Shape2{128, 64});
  CHECK(stage_seed(42, "unet") != stage_seed(42, "gan"));
}

TEST_CASE("full-resolution switch applies only when requested") {
  RunConfig cfg;
  CHECK_FALSE(cfg.apply_paper_scale());
  CHECK(cfg.geometry().image_shape == Shape2{128, 64});
  CHECK(cfg.synthesis(shipped_spectra()).simulation.water_offset_mm == doctest::Approx(3.0));
  cfg.set("paper_scale=true");
  CHECK(cfg.apply_paper_scale());
  CHECK(cfg.geometry().image_shape == Shape2{256, 128});
  CHECK(cfg.geometry().spacing_mm == doctest::Approx(0.16));
  CHECK(cfg.dataset_scale() == 1.0);
  CHECK(cfg.unet().image == Shape2{256, 128});
  CHECK(cfg.synthesis(shipped_spectra()).simulation.water_offset_mm == doctest::Approx(43.2));
}

TEST_CASE("unknown flag exits 1 with one error line and no outputs") {
  const fs::path out = scratch("unknown");
  const RunResult r = run("gen-masks --bogus --out " + out.string());
  CHECK(r.code == 1);
  CHECK(last_line_is_error(r.err, "usage"));
  CHECK_FALSE(fs::exists(out));

  const RunResult none = run("");
  CHECK(none.code == 1);
}

TEST_CASE("gen-masks writes the requested PNG and JSON pairs") {
  const fs::path out = scratch("masks");
  const RunResult r = run("gen-masks -n 10 --seed 1 --out " + out.string());
  REQUIRE(r.code == 0);
  CHECK(count_ext(out, "mask_", ".png") == 10);
  CHECK(count_ext(out, "mask_", ".json") == 10);
  const auto run_json = read_json(out / "run.json");
  CHECK(run_json.at("command") == "gen-masks");
  CHECK(run_json.at("seed") == 1);
  CHECK(run_json.at("config").at("seed") == 1);
  CHECK(run_json.at("config_hash").get<std::string>().size() == 16);

  const fs::path again = scratch("masks_again");
  REQUIRE(run("gen-masks -n 10 --seed 1 --out " + again.string()).code == 0);
  CHECK(tree_contents(out) == tree_contents(again));
  const fs::path other = scratch("masks_other");
  REQUIRE(run("gen-masks -n 10 --seed 2 --out " + other.string()).code == 0);
  CHECK(tree_contents(out) != tree_contents(other));
}

TEST_CASE("config errors are reported before anything is written") {
  const fs::path out = scratch("badcfg");
  RunResult r = run("gen-masks --set unet.nope=1 --out " + out.string());
  CHECK(r.code == 1);
  CHECK(last_line_is_error(r.err, "invalid-config"));
  CHECK_FALSE(fs::exists(out));

  r = run("gen-masks --config /nonexistent.yaml --out " + out.string());
  CHECK(r.code == 1);
  CHECK_FALSE(fs::exists(out));
}

TEST_CASE("failed runs remove their partial outputs") {
  const fs::path anno = scratch("few_anno");
  REQUIRE(run("gen-masks -n 3 --prior annotation --out " + anno.string()).code == 0);

  // The literature pool is generated and written before the annotation pool
  // turns out too small.
  const fs::path fresh = scratch("partial_fresh");
  RunResult r = run("build-dataset --dataset lit-gan-anno --gan-dir " + anno.string() + " --anno-dir " +
                    anno.string() + " --out " + fresh.string() + kSmoke);
  CHECK(r.code == 1);
  CHECK(last_line_is_error(r.err, "insufficient-pool"));
  CHECK_FALSE(fs::exists(fresh));

  const fs::path existing = scratch("partial_existing");
  fs::create_directories(existing);
  std::ofstream(existing / "keep.txt") << "x";
  r = run("build-dataset --dataset lit-gan-anno --gan-dir " + anno.string() + " --anno-dir " + anno.string() +
          " --out " + existing.string() + kSmoke);
  CHECK(r.code == 1);
  CHECK(fs::exists(existing / "keep.txt"));
  CHECK(std::distance(fs::directory_iterator(existing), fs::directory_iterator{}) == 1);
}

TEST_CASE("experiment smoke run writes parseable, reproducible reports") {
  const fs::path out = scratch("experiment");
  REQUIRE(run("experiment --out " + out.string() + kSmoke).code == 0);

  const auto metrics = read_metrics_csv(out / "metrics.csv");
  CHECK_FALSE(metrics.empty());
  std::set<std::string> algorithms;
  for (const auto& m : metrics) algorithms.insert(m.algorithm);
  const std::set<std::string> expected{"anno", "lit"};
  CHECK(algorithms == expected);

  const auto ranking = read_json(out / "ranking.json");
  REQUIRE(ranking.at("reports").size() == 1);
  const auto& report = ranking["reports"][0];
  CHECK(report.at("algorithms").size() == 2);
  CHECK(ranking.at("mean_overall_ae").contains("anno"));

  const std::string svg = slurp(out / "ranking.svg");
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("</svg>") != std::string::npos);
  CHECK(svg.find("class=\"blob\"") != std::string::npos);

  const auto run_json = read_json(out / "run.json");
  CHECK(run_json.at("stage_seeds").contains("unet"));

  // Different worker counts must not change any primary output.
  const fs::path again = scratch("experiment_again");
  REQUIRE(run("experiment --workers 2 --out " + again.string() + kSmoke).code == 0);
  CHECK(tree_contents(out) == tree_contents(again));
}
