#include "pasyn/experiment.hpp"

#include <algorithm>
#include <cstdio>

#include "pasyn/error.hpp"
#include "pasyn/mask_io.hpp"
#include "pasyn/volume_io.hpp"

namespace pasyn {

namespace fs = std::filesystem;

namespace {

struct CachedSample {
  UnetSample data;
  MultispectralImage input;  // noisy log p0
  MultispectralImage gt;     // log mua
  const LabelMap2* mask = nullptr;
};

class SampleCache {
 public:
  explicit SampleCache(const ExperimentSpec& spec) : spec_(spec) {}

  const CachedSample& get(const SampleId& id) {
    const std::string key = id.str();
    if (auto it = cache_.find(key); it != cache_.end()) return it->second;
    const auto src = spec_.masks.find(id.source);
    require(src != spec_.masks.end() && id.index < src->second->size(), ErrorCode::kInsufficientPool,
            "experiment: no mask for sample " + key);
    const LabelMap2& mask = (*src->second)[id.index];
    const SampleSeeds seeds = sample_seeds(spec_.data_seed, id);
    const auto& s = spec_.synthesis;
    const SimulationResult sim = simulate_multispectral(mask, s.optics, *s.spectra, s.grid, s.simulation,
                                                        {seeds.instance, seeds.sim}, key);
    MultispectralImage input = preprocess(sim.p0, s.noise_sigma, seeds.noise);
    MultispectralImage gt = preprocess(sim.mua, 0.0, 0);
    if (!spec_.out_dir.empty()) {
      std::string name = key;
      std::replace(name.begin(), name.end(), ':', '_');
      const fs::path dir = spec_.out_dir / "samples" / name;
      fs::create_directories(dir);
      write_vol16(dir / "input.vol16", input);
      write_vol16(dir / "gt_mua.vol16", gt);
      write_mask_png(mask, dir / "mask.png");
    }
    CachedSample c{make_unet_sample(input, gt, key), std::move(input), std::move(gt), &mask};
    return cache_.emplace(key, std::move(c)).first->second;
  }

  std::vector<UnetSample> samples(const std::vector<SampleId>& ids) {
    std::vector<UnetSample> out;
    for (const auto& id : ids) out.push_back(get(id).data);
    return out;
  }

 private:
  const ExperimentSpec& spec_;
  std::map<std::string, CachedSample> cache_;
};

void say(const ExperimentSpec& spec, const std::string& msg) {
  if (spec.log) spec.log(msg);
}

}  // namespace

void write_ranking_outputs(const fs::path& dir, const std::vector<RankingReport>& reports,
                           const nlohmann::json& extra) {
  require(!reports.empty(), ErrorCode::kEmptyReport, "no ranking reports to write");
  nlohmann::json j = extra;
  j["reports"] = nlohmann::json::array();
  for (const auto& r : reports) j["reports"].push_back(r.to_json());
  fs::create_directories(dir);
  write_json(dir / "ranking.json", j);
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    const std::string name =
        i == 0 ? "ranking.svg" : "ranking_" + r.metric + "_c" + std::to_string(r.tissue_class) + ".svg";
    render_blob_svg(r, dir / name);
  }
}

ExperimentResult run_experiment(const ExperimentSpec& spec) {
  require(!spec.variants.empty(), ErrorCode::kInvalidConfig, "experiment: no variants");
  require(!spec.test.empty(), ErrorCode::kInvalidConfig, "experiment: empty test set");
  require(spec.synthesis.spectra != nullptr, ErrorCode::kInvalidParams, "experiment: spectra not set");
  for (const auto& v : spec.variants)
    require(!v.name.empty() && v.name.find_first_of(",\n/") == std::string::npos, ErrorCode::kInvalidConfig,
            "experiment: invalid variant name '" + v.name + "'");
  if (!spec.out_dir.empty()) fs::create_directories(spec.out_dir);

  SampleCache cache(spec);
  say(spec, "simulating " + std::to_string(spec.test.size()) + " shared test samples");
  std::vector<const CachedSample*> test;
  for (const auto& id : spec.test) test.push_back(&cache.get(id));

  ExperimentResult result;
  for (const auto& variant : spec.variants) {
    say(spec, "variant " + variant.name + ": simulating " +
                  std::to_string(variant.manifest.train.size() + variant.manifest.val.size()) + " samples");
    const auto train = cache.samples(variant.manifest.train);
    const auto val = cache.samples(variant.manifest.val);
    UnetTrainOptions opts = spec.training;
    if (!spec.out_dir.empty()) {
      opts.out_dir = spec.out_dir / variant.name;
      fs::create_directories(opts.out_dir);
      write_json(opts.out_dir / "manifest.json", variant.manifest.to_json());
    }
    opts.on_epoch = [&](const UnetEpochRecord& r) {
      char buf[128];
      std::snprintf(buf, sizeof buf, "variant %s: epoch %d train_mse %.5g val_mse %.5g", variant.name.c_str(),
                    r.epoch, r.train_mse, r.val_mse);
      say(spec, buf);
    };
    UnetTrainResult trained = train_unet(train, val, spec.unet, spec.train_seed, opts);

    double ae_sum = 0.0;
    int ae_count = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
      const MultispectralImage est = predict_mua(*trained.model, test[i]->input);
      if (!spec.out_dir.empty()) {
        const fs::path dir = spec.out_dir / "predictions" / variant.name / sample_dir_name(i);
        fs::create_directories(dir);
        write_vol16(dir / "pred_log_mua.vol16", est);
      }
      for (auto& rec : evaluate_case(variant.name, static_cast<int>(i), est, test[i]->gt, *test[i]->mask)) {
        if (rec.metric == Metric::kAE && rec.tissue_class == kOverallClass) {
          ae_sum += rec.value;
          ++ae_count;
        }
        result.metrics.push_back(std::move(rec));
      }
    }
    result.mean_overall_ae[variant.name] = ae_sum / ae_count;
    char buf[160];
    std::snprintf(buf, sizeof buf, "variant %s: best epoch %d, test mean AE %.6g", variant.name.c_str(),
                  trained.best_epoch, result.mean_overall_ae[variant.name]);
    say(spec, buf);
  }

  for (const auto& req : spec.rankings) {
    RankingReport r = bootstrap_ranking(rank_input_from_records(result.metrics, req.metric, req.tissue_class),
                                        spec.n_boot, spec.boot_seed);
    r.metric = to_string(req.metric);
    r.tissue_class = req.tissue_class;
    result.reports.push_back(std::move(r));
  }

  if (!spec.out_dir.empty()) {
    write_metrics_csv(spec.out_dir / "metrics.csv", result.metrics);
    nlohmann::json summary = nlohmann::json::object();
    for (const auto& [name, ae] : result.mean_overall_ae) summary[name] = ae;
    if (!result.reports.empty())
      write_ranking_outputs(spec.out_dir, result.reports, {{"mean_overall_ae", summary}});
  }
  return result;
}

}  // namespace pasyn
