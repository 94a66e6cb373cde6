#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "pasyn/experiment.hpp"
#include "pasyn/run_config.hpp"

namespace pasyn {

using LogFn = std::function<void(const std::string&)>;

// Mask i is drawn with derive_seed(seed, i).
std::vector<LabelMap2> generate_masks(const ForearmModelParams& params, std::size_t n, std::uint64_t seed);

std::vector<LabelMap2> load_masks(const std::filesystem::path& dir);

struct MaskSet {
  std::vector<LabelMap2> anno;
  std::vector<LabelMap2> gan;
  std::vector<LabelMap2> lit;

  MaskPools sizes() const { return {anno.size(), gan.size(), lit.size()}; }
  MaskLookup lookup() const { return {{"anno", &anno}, {"gan", &gan}, {"lit", &lit}}; }
};

struct MaskSources {
  // Directories of stored masks; an empty path means the pool is generated.
  std::filesystem::path anno_dir;
  std::filesystem::path gan_dir;
  std::filesystem::path lit_dir;
  // When set, generated pools are written to <write_dir>/<source>/ and the
  // GAN to <write_dir>/gan_model/.
  std::filesystem::path write_dir;
  LogFn log;
};

// Loads or generates the pools the given configs need. Annotation masks come
// from the stand-in prior unless a directory is given. The GAN pool is
// sampled from a GAN trained on the annotation train and val masks.
MaskSet prepare_masks(const RunConfig& config, const std::vector<DatasetConfig>& configs,
                      const MaskSources& sources);

// One variant per configured dataset config, all tested on the shared
// annotation test split.
ExperimentSpec experiment_spec(const RunConfig& config, const MaskSet& masks, const ChromophoreSpectra& spectra);

}  // namespace pasyn
