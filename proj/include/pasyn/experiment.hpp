#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "pasyn/dataset.hpp"
#include "pasyn/eval/ranking.hpp"
#include "pasyn/models/unet.hpp"

namespace pasyn {

struct ExperimentVariant {
  std::string name;
  DatasetManifest manifest;  // train and val splits are used
};

struct RankingRequest {
  Metric metric = Metric::kAE;
  int tissue_class = kOverallClass;
};

struct ExperimentSpec {
  std::vector<ExperimentVariant> variants;
  std::vector<SampleId> test;  // shared by every variant
  MaskLookup masks;
  SynthesisSettings synthesis;
  std::uint64_t data_seed = 0;  // seeds the per-sample simulation streams
  UnetSpec unet;
  UnetTrainOptions training;  // out_dir and on_epoch are set per variant
  std::uint64_t train_seed = 0;
  std::vector<RankingRequest> rankings;
  int n_boot = 1000;
  std::uint64_t boot_seed = 0;
  // Empty: nothing written. Otherwise samples/, <variant>/ checkpoints,
  // predictions/, metrics.csv, ranking.json and ranking*.svg.
  std::filesystem::path out_dir;
  std::function<void(const std::string&)> log;
};

struct ExperimentResult {
  std::vector<MetricRecord> metrics;
  std::vector<RankingReport> reports;
  // Mean over test cases and wavelengths of the class-0 AE, per variant.
  std::map<std::string, double> mean_overall_ae;
};

// ranking.json (reports plus `extra` fields), ranking.svg for the first
// report and ranking_<metric>_c<class>.svg for the rest.
void write_ranking_outputs(const std::filesystem::path& dir, const std::vector<RankingReport>& reports,
                           const nlohmann::json& extra = nlohmann::json::object());

// Simulates every distinct sample once, trains one U-Net per variant,
// evaluates all of them on the shared test set and ranks them.
ExperimentResult run_experiment(const ExperimentSpec& spec);

}  // namespace pasyn
