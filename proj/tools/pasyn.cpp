// Command-line entry point. Every subcommand resolves one RunConfig, runs one
// pipeline stage into --out and records run.json next to its outputs.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "pasyn/error.hpp"
#include "pasyn/mask_io.hpp"
#include "pasyn/rng.hpp"
#include "pasyn/volume_io.hpp"
#include "pasyn/workflow.hpp"

#ifndef PASYN_VERSION
#define PASYN_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pasyn;

namespace {

struct CommonOptions {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::string out;
  bool paper_scale = false;
};

struct Options {
  CommonOptions common;
  // gen-masks / sample-masks
  std::size_t count = 10;
  std::string prior = "literature";
  // train-gan
  std::string data;
  // sample-masks / predict
  std::string ckpt;
  // build-dataset
  std::string dataset;
  std::string anno_dir, gan_dir, lit_dir;
  // simulate
  std::string mask;
  // predict
  std::string input;
  // evaluate
  std::string pred_dir, gt_dir, algorithm = "model";
  // rank
  std::vector<std::string> metrics;
  std::string metric;
  std::vector<int> classes;
  std::optional<int> boot;
};

void log_line(const std::string& msg) { std::cerr << "[pasyn] " << msg << std::endl; }

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += (c == '\n' || c == '\r') ? ' ' : c;
  }
  return out;
}

int report_error(const std::string& kind, const std::string& msg) {
  std::cerr << "error: kind=" << kind << " msg=\"" << escape(msg) << "\"" << std::endl;
  return 1;
}

// Removes whatever a failed run added under `out`.
class OutputGuard {
 public:
  explicit OutputGuard(fs::path out) : out_(std::move(out)) {
    existed_ = fs::exists(out_);
    if (existed_)
      for (const auto& e : fs::directory_iterator(out_)) before_.insert(e.path().filename().string());
    fs::create_directories(out_);
  }
  void commit() { committed_ = true; }
  ~OutputGuard() {
    if (committed_) return;
    std::error_code ec;
    if (!existed_) {
      fs::remove_all(out_, ec);
      return;
    }
    for (const auto& e : fs::directory_iterator(out_, ec))
      if (!before_.count(e.path().filename().string())) fs::remove_all(e.path(), ec);
  }

 private:
  fs::path out_;
  bool existed_ = false;
  bool committed_ = false;
  std::set<std::string> before_;
};

RunConfig resolve_config(const CommonOptions& o) {
  RunConfig cfg;
  if (!o.config.empty()) cfg.merge_file(o.config);
  for (const auto& s : o.sets) cfg.set(s);
  if (o.seed) cfg.merge({{"seed", *o.seed}});
  if (o.workers) cfg.merge({{"workers", *o.workers}});
  if (o.paper_scale) cfg.merge({{"paper_scale", true}});
  if (cfg.apply_paper_scale())
    std::cerr << "warning: --paper-scale selects 256x128 masks at 0.16 mm and full dataset sizes; expect runs of "
                 "many hours to days on a desk machine"
              << std::endl;
  return cfg;
}

LabelMap2 read_mask_file(const fs::path& png, double fallback_spacing) {
  require(fs::is_regular_file(png), ErrorCode::kIo, "mask not found: " + png.string());
  fs::path sidecar = png;
  sidecar.replace_extension(".json");
  double spacing = fallback_spacing;
  if (fs::exists(sidecar)) spacing = read_json(sidecar).value("spacing_mm", fallback_spacing);
  return read_mask_png(png, spacing);
}

// Each returns the seeds it used.
using Runner = std::function<json(const Options&, const RunConfig&, const fs::path&)>;

json run_gen_masks(const Options& o, const RunConfig& cfg, const fs::path& out) {
  require(o.prior == "literature" || o.prior == "annotation", ErrorCode::kInvalidConfig,
          "--prior must be literature or annotation");
  const ForearmModelParams params = o.prior == "literature" ? cfg.geometry() : cfg.annotation_geometry();
  const std::uint64_t seed = cfg.seed();
  const auto masks = generate_masks(params, o.count, seed);
  for (std::size_t i = 0; i < masks.size(); ++i)
    write_mask(out, i, masks[i], {params.spacing_mm, "forearm", derive_seed(seed, i), o.prior});
  log_line("wrote " + std::to_string(masks.size()) + " masks");
  return {{"masks", seed}};
}

json run_train_gan(const Options& o, const RunConfig& cfg, const fs::path& out) {
  const auto masks = load_masks(o.data);
  GanTrainOptions opts = cfg.gan_training();
  opts.out_dir = out;
  opts.on_epoch = [](const GanEpochRecord& r) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "epoch %d d_loss %.4f g_loss %.4f d_acc %.3f p_flip %.3f", r.epoch, r.d_loss,
                  r.g_loss, r.d_accuracy, r.p_flip);
    log_line(buf);
  };
  const std::uint64_t seed = stage_seed(cfg.seed(), "gan");
  const GanTrainResult r = train_gan(hflip_copy_augment(masks), cfg.gan(), seed, opts);
  log_line("trained for " + std::to_string(r.steps) + " steps on " + std::to_string(2 * masks.size()) +
           " flip-augmented masks");
  return {{"gan", seed}};
}

json run_sample_masks(const Options& o, const RunConfig& cfg, const fs::path& out) {
  Dcgan model = Dcgan::load(o.ckpt);
  const std::uint64_t seed = cfg.seed();
  const auto masks = sample_masks(model, o.count, seed);
  for (std::size_t i = 0; i < masks.size(); ++i)
    write_mask(out, i, masks[i], {model.spacing_mm, "forearm", derive_seed(seed, i), "gan"});
  log_line("wrote " + std::to_string(masks.size()) + " masks");
  return {{"latents", seed}};
}

json run_build_dataset(const Options& o, const RunConfig& cfg, const fs::path& out) {
  const DatasetConfig config = o.dataset.empty() ? cfg.dataset_config() : dataset_config_from_string(o.dataset);
  const MaskSet masks = prepare_masks(cfg, {config}, {o.anno_dir, o.gan_dir, o.lit_dir, out / "masks", log_line});
  const std::uint64_t seed = stage_seed(cfg.seed(), "dataset");
  const DatasetManifest manifest = build_dataset(config, masks.sizes(), seed, cfg.dataset_scale());
  const auto c = manifest.counts();
  log_line("synthesizing " + to_string(config) + ": " + std::to_string(c.train) + "/" + std::to_string(c.val) + "/" +
           std::to_string(c.test));
  synthesize_dataset(out, manifest, masks.lookup(), cfg.synthesis(shipped_spectra()));
  return {{"dataset", seed},
          {"masks/anno", stage_seed(cfg.seed(), "masks/anno")},
          {"masks/lit", stage_seed(cfg.seed(), "masks/lit")},
          {"masks/gan", stage_seed(cfg.seed(), "masks/gan")},
          {"gan", stage_seed(cfg.seed(), "gan")}};
}

json run_simulate(const Options& o, const RunConfig& cfg, const fs::path& out) {
  const LabelMap2 mask = read_mask_file(o.mask, cfg.geometry().spacing_mm);
  const std::uint64_t seed = cfg.seed();
  const SampleId id{"mask", 0};
  write_sample(out, mask, id, cfg.synthesis(shipped_spectra()), seed);
  const SampleSeeds s = sample_seeds(seed, id);
  return {{"dataset", seed}, {"instance", s.instance}, {"sim", s.sim}, {"noise", s.noise}};
}

json run_train_unet(const Options& o, const RunConfig& cfg, const fs::path& out) {
  const auto train = load_unet_split(fs::path(o.data) / "train");
  const auto val = load_unet_split(fs::path(o.data) / "val");
  require(!train.empty(), ErrorCode::kIo, "no training samples under " + o.data);
  UnetSpec spec = cfg.unet();
  spec.channels = train.front().input.c();
  spec.image = {train.front().input.w(), train.front().input.h()};
  spec.validate();
  UnetTrainOptions opts = cfg.unet_training();
  opts.out_dir = out;
  opts.on_epoch = [](const UnetEpochRecord& r) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "epoch %d train_mse %.5g val_mse %.5g", r.epoch, r.train_mse, r.val_mse);
    log_line(buf);
  };
  const std::uint64_t seed = stage_seed(cfg.seed(), "unet");
  const UnetTrainResult r = train_unet(train, val, spec, seed, opts);
  log_line("best epoch " + std::to_string(r.best_epoch) + " val_mse " + std::to_string(r.best_val_mse));
  return {{"unet", seed}};
}

json run_predict(const Options& o, const RunConfig&, const fs::path& out) {
  auto model = load_unet(o.ckpt);
  const fs::path input = o.input;
  if (fs::is_regular_file(input)) {
    write_vol16(out / "pred_log_mua.vol16", predict_mua(*model, read_vol16(input)));
    return json::object();
  }
  const auto samples = list_samples(input);
  require(!samples.empty(), ErrorCode::kIo, "no sample_* directories under " + input.string());
  for (const auto& dir : samples) {
    const fs::path dst = out / dir.filename();
    fs::create_directories(dst);
    write_vol16(dst / "pred_log_mua.vol16", predict_mua(*model, read_vol16(dir / "input.vol16")));
  }
  log_line("predicted " + std::to_string(samples.size()) + " samples");
  return json::object();
}

json run_evaluate(const Options& o, const RunConfig&, const fs::path& out) {
  const auto samples = list_samples(o.gt_dir);
  require(!samples.empty(), ErrorCode::kIo, "no sample_* directories under " + o.gt_dir);
  std::vector<MetricRecord> records;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const fs::path pred = fs::path(o.pred_dir) / samples[i].filename() / "pred_log_mua.vol16";
    require(fs::exists(pred), ErrorCode::kMissingCell, "no prediction for " + samples[i].filename().string());
    const MultispectralImage gt = read_vol16(samples[i] / "gt_mua.vol16");
    const LabelMap2 mask = read_mask_png(samples[i] / "mask.png", gt.spacing_mm);
    for (auto& r : evaluate_case(o.algorithm, static_cast<int>(i), read_vol16(pred), gt, mask))
      records.push_back(std::move(r));
  }
  write_metrics_csv(out / "metrics.csv", records);
  log_line("evaluated " + std::to_string(samples.size()) + " cases");
  return json::object();
}

json run_rank(const Options& o, const RunConfig& cfg, const fs::path& out) {
  std::vector<MetricRecord> records;
  for (const auto& path : o.metrics)
    for (auto& r : read_metrics_csv(path)) records.push_back(std::move(r));
  std::vector<RankingRequest> requests = cfg.rankings();
  if (!o.metric.empty())
    for (auto& r : requests) r.metric = metric_from_string(o.metric);
  if (!o.classes.empty()) {
    const Metric m = requests.front().metric;
    requests.clear();
    for (int c : o.classes) requests.push_back({m, c});
  }
  const int n_boot = o.boot ? *o.boot : cfg.n_boot();
  const std::uint64_t seed = stage_seed(cfg.seed(), "rank");
  std::vector<RankingReport> reports;
  for (const auto& req : requests) {
    RankingReport r = bootstrap_ranking(rank_input_from_records(records, req.metric, req.tissue_class), n_boot, seed);
    r.metric = to_string(req.metric);
    r.tissue_class = req.tissue_class;
    reports.push_back(std::move(r));
  }
  write_ranking_outputs(out, reports);
  return {{"bootstrap", seed}};
}

json run_experiment_cmd(const Options& o, const RunConfig& cfg, const fs::path& out) {
  std::vector<DatasetConfig> configs;
  for (const auto& v : cfg.variants()) configs.push_back(dataset_config_from_string(v));
  const MaskSet masks = prepare_masks(cfg, configs, {o.anno_dir, o.gan_dir, o.lit_dir, out / "masks", log_line});
  ExperimentSpec spec = experiment_spec(cfg, masks, shipped_spectra());
  spec.out_dir = out;
  spec.log = log_line;
  const ExperimentResult r = run_experiment(spec);
  for (const auto& [name, ae] : r.mean_overall_ae) log_line("mean overall AE " + name + ": " + std::to_string(ae));
  return {{"dataset", spec.data_seed},
          {"unet", spec.train_seed},
          {"bootstrap", spec.boot_seed},
          {"masks/anno", stage_seed(cfg.seed(), "masks/anno")},
          {"masks/lit", stage_seed(cfg.seed(), "masks/lit")},
          {"masks/gan", stage_seed(cfg.seed(), "masks/gan")},
          {"gan", stage_seed(cfg.seed(), "gan")}};
}

void add_common(CLI::App* sub, CommonOptions& c) {
  sub->add_option("--config", c.config, "YAML run configuration")->check(CLI::ExistingFile);
  sub->add_option("--set", c.sets, "Override a config key, e.g. --set unet.epochs=5");
  sub->add_option("--seed", c.seed, "Run seed (config key: seed)");
  sub->add_option("--workers", c.workers, "Worker threads, 0 = all cores (config key: workers)");
  sub->add_option("--out", c.out, "Output directory")->required();
  sub->add_flag("--paper-scale", c.paper_scale, "Full-resolution settings (slow)");
}

void add_sources(CLI::App* sub, Options& o) {
  sub->add_option("--anno-dir", o.anno_dir, "Annotation masks (default: generated stand-in)");
  sub->add_option("--gan-dir", o.gan_dir, "GAN masks (default: train a GAN on the annotation masks)");
  sub->add_option("--lit-dir", o.lit_dir, "Literature-prior masks (default: generated)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Synthetic photoacoustic training data and model evaluation", "pasyn"};
  app.set_version_flag("--version", PASYN_VERSION);
  app.require_subcommand(1);
  Options o;
  std::vector<std::pair<CLI::App*, Runner>> commands;
  auto add = [&](const char* name, const char* help, Runner run) {
    CLI::App* sub = app.add_subcommand(name, help);
    add_common(sub, o.common);
    commands.emplace_back(sub, std::move(run));
    return sub;
  };

  auto* gen = add("gen-masks", "Sample label maps from a geometry prior", run_gen_masks);
  gen->add_option("-n,--count", o.count, "Number of masks");
  gen->add_option("--prior", o.prior, "literature | annotation");

  auto* tgan = add("train-gan", "Train the mask GAN", run_train_gan);
  tgan->add_option("--data", o.data, "Directory of training masks")->required()->check(CLI::ExistingDirectory);

  auto* smp = add("sample-masks", "Draw masks from a trained GAN", run_sample_masks);
  smp->add_option("--ckpt", o.ckpt, "GAN checkpoint")->required()->check(CLI::ExistingFile);
  smp->add_option("-n,--count", o.count, "Number of masks");

  auto* bld = add("build-dataset", "Assemble and synthesize one dataset config", run_build_dataset);
  bld->add_option("--dataset", o.dataset, "anno | gan | gan-anno | lit | lit-gan-anno (config key: dataset.config)");
  add_sources(bld, o);

  auto* sim = add("simulate", "Simulate one multispectral sample from a mask", run_simulate);
  sim->add_option("--mask", o.mask, "Mask PNG")->required()->check(CLI::ExistingFile);

  auto* tun = add("train-unet", "Train the U-Net on a synthesized dataset", run_train_unet);
  tun->add_option("--data", o.data, "Dataset directory with train/ and val/")
      ->required()
      ->check(CLI::ExistingDirectory);

  auto* pred = add("predict", "Estimate log absorption with a trained U-Net", run_predict);
  pred->add_option("--ckpt", o.ckpt, "U-Net checkpoint")->required()->check(CLI::ExistingFile);
  pred->add_option("--input", o.input, "input.vol16 file or a split directory")->required()->check(CLI::ExistingPath);

  auto* ev = add("evaluate", "Compute AE, RE and SSIM against ground truth", run_evaluate);
  ev->add_option("--pred-dir", o.pred_dir, "Prediction directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--gt-dir", o.gt_dir, "Split directory with ground truth")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--algorithm", o.algorithm, "Algorithm name written to the metrics");

  auto* rk = add("rank", "Bootstrap ranking of algorithms from metrics files", run_rank);
  rk->add_option("--metrics", o.metrics, "metrics.csv files")->required()->check(CLI::ExistingFile);
  rk->add_option("--metric", o.metric, "AE | RE | SSIM (config key: experiment.metric)");
  rk->add_option("--classes", o.classes, "Tissue classes, 0 = overall (config key: experiment.classes)")
      ->delimiter(',');
  rk->add_option("--boot", o.boot, "Bootstrap replicates (config key: experiment.n_boot)");

  auto* exp = add("experiment", "Train one U-Net per dataset config and rank them", run_experiment_cmd);
  add_sources(exp, o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error("usage", e.what());
  }

  CLI::App* chosen = app.get_subcommands().front();
  Runner runner;
  for (auto& [sub, run] : commands)
    if (sub == chosen) runner = run;

  const std::string started = utc_now();
  try {
    const RunConfig cfg = resolve_config(o.common);
    const fs::path out = o.common.out;
    OutputGuard guard(out);
    const json seeds = runner(o, cfg, out);
    json record = {{"command", chosen->get_name()},
                   {"argv", std::vector<std::string>(argv, argv + argc)},
                   {"config", cfg.tree()},
                   {"config_hash", cfg.hash()},
                   {"seed", cfg.seed()},
                   {"stage_seeds", seeds},
                   {"version", PASYN_VERSION},
                   {"started_utc", started},
                   {"finished_utc", utc_now()}};
    write_json(out / "run.json", record);
    guard.commit();
    return 0;
  } catch (const Error& e) {
    return report_error(to_string(e.code()), e.what());
  } catch (const fs::filesystem_error& e) {
    return report_error("io", e.what());
  } catch (const std::exception& e) {
    return report_error("internal", e.what());
  }
}
