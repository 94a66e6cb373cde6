#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pasyn/dataset.hpp"
#include "pasyn/experiment.hpp"
#include "pasyn/geometry.hpp"
#include "pasyn/models/gan.hpp"
#include "pasyn/models/unet.hpp"

namespace pasyn {

nlohmann::json forearm_params_to_json(const ForearmModelParams& p);
ForearmModelParams forearm_params_from_json(const nlohmann::json& j);

// YAML text to a JSON tree. Unquoted scalars become booleans or numbers when
// they parse as such. Throws invalid-config.
nlohmann::json yaml_to_json(const std::string& text);

// Resolved configuration tree. Every key has a default; overlays may only
// set keys that already exist.
class RunConfig {
 public:
  RunConfig();  // defaults

  static nlohmann::json defaults();

  // Overlays a YAML file. Throws invalid-config or io.
  void merge_file(const std::filesystem::path& path);
  // Overlays a tree. Unknown keys and kind changes throw invalid-config.
  void merge(const nlohmann::json& overlay);
  // "a.b.c=value", value parsed as YAML.
  void set(const std::string& assignment);

  // Applies the full-resolution settings (256x128 masks, 43.2 mm water
  // offset, full dataset sizes) when `paper_scale` is true and returns
  // whether it did.
  bool apply_paper_scale();

  const nlohmann::json& tree() const { return tree_; }
  const nlohmann::json& at(const std::string& dotted) const;
  std::string hash() const;  // 16 hex digits over the canonical dump

  std::uint64_t seed() const;
  int workers() const;  // 0 resolves to the available cores
  ForearmModelParams geometry() const;
  ForearmModelParams annotation_geometry() const;
  std::filesystem::path annotation_dir() const;
  TissueOpticalSpec optics() const;
  SynthesisSettings synthesis(const ChromophoreSpectra& spectra) const;
  GanHyperparams gan() const;
  GanTrainOptions gan_training() const;
  UnetSpec unet() const;
  UnetTrainOptions unet_training() const;
  DatasetConfig dataset_config() const;
  double dataset_scale() const;
  MaskPools pools() const;
  std::vector<std::string> variants() const;
  std::vector<RankingRequest> rankings() const;
  int n_boot() const;

 private:
  nlohmann::json tree_;
};

// Seed for one named stage of a run.
std::uint64_t stage_seed(std::uint64_t run_seed, const std::string& stage);

}  // namespace pasyn
