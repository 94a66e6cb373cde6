#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pasyn/mask_io.hpp"
#include "pasyn/synth_pipeline.hpp"

namespace pasyn {

enum class DatasetConfig { kAnno, kGan, kGanAnno, kLit, kLitGanAnno };

std::string to_string(DatasetConfig c);
DatasetConfig dataset_config_from_string(const std::string& name);

struct SplitCounts {
  int train = 0;
  int val = 0;
  int test = 0;
  int total() const { return train + val + test; }
  friend bool operator==(const SplitCounts&, const SplitCounts&) = default;
};

// Per-source split sizes of the reference configurations.
SplitCounts reference_counts(DatasetConfig c);

// 70/10/20 split of n samples: val and test rounded to nearest, train takes the rest.
SplitCounts split_70_10_20(int n);

// Share of annotation samples in the mixed configuration (19 : 81).
inline constexpr double kAnnoShare = 19.0 / 100.0;

struct MaskPools {
  std::size_t anno = 0;
  std::size_t gan = 0;
  std::size_t lit = 0;
};

// Sample ids are "<source>:<index>" with source in {anno, gan, lit}.
struct SampleId {
  std::string source;
  std::size_t index = 0;

  std::string str() const;
  static SampleId parse(const std::string& s);
  friend bool operator==(const SampleId&, const SampleId&) = default;
};

struct DatasetManifest {
  std::string config;
  std::vector<SampleId> train;
  std::vector<SampleId> val;
  std::vector<SampleId> test;
  std::vector<SampleId> target_test;  // shared annotation test split
  std::map<std::string, double> source_mix;
  std::uint64_t seed = 0;

  SplitCounts counts() const {
    return {static_cast<int>(train.size()), static_cast<int>(val.size()), static_cast<int>(test.size())};
  }
  const std::vector<SampleId>& split(const std::string& name) const;

  nlohmann::json to_json() const;
  static DatasetManifest from_json(const nlohmann::json& j);
};

// Reference counts scaled by `scale` in (0, 1], each rounded with a minimum of 1.
SplitCounts scale_counts(SplitCounts c, double scale);

// Reference split sizes times `scale` (1 reproduces them exactly). Throws
// insufficient-pool.
DatasetManifest build_dataset(DatasetConfig config, const MaskPools& pools, std::uint64_t seed, double scale = 1.0);

// Manifest for a single custom pool split 70/10/20.
DatasetManifest build_custom_dataset(const std::string& name, const std::string& source, std::size_t pool,
                                     std::uint64_t seed);

struct SynthesisSettings {
  TissueOpticalSpec optics;
  const ChromophoreSpectra* spectra = nullptr;
  WavelengthGrid grid = WavelengthGrid::paper_default();
  SimulationSettings simulation;
  double noise_sigma = 0.5;
};

// Seeds of one sample, derived from the dataset seed and the sample id.
struct SampleSeeds {
  std::uint64_t instance = 0;
  std::uint64_t sim = 0;
  std::uint64_t noise = 0;
};
SampleSeeds sample_seeds(std::uint64_t dataset_seed, const SampleId& id);

std::string sample_dir_name(std::size_t index);  // "sample_%05d"

// Simulates, preprocesses and writes one sample directory:
// input.vol16, gt_mua.vol16, mask.png, meta.json.
void write_sample(const std::filesystem::path& dir, const LabelMap2& mask, const SampleId& id,
                  const SynthesisSettings& settings, std::uint64_t dataset_seed);

using MaskLookup = std::map<std::string, const std::vector<LabelMap2>*>;

// Writes <root>/<config>/<split>/sample_%05d/ for every manifest entry plus
// <root>/<config>/manifest.json.
void synthesize_dataset(const std::filesystem::path& root, const DatasetManifest& manifest, const MaskLookup& masks,
                        const SynthesisSettings& settings);

// Sorted sample directories of a split directory.
std::vector<std::filesystem::path> list_samples(const std::filesystem::path& split_dir);

}  // namespace pasyn
