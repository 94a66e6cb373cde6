#include "pasyn/workflow.hpp"

#include <algorithm>

#include "pasyn/error.hpp"
#include "pasyn/mask_io.hpp"
#include "pasyn/rng.hpp"

namespace pasyn {

namespace fs = std::filesystem;

std::vector<LabelMap2> generate_masks(const ForearmModelParams& params, std::size_t n, std::uint64_t seed) {
  std::vector<LabelMap2> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(generate_forearm_labelmap(params, derive_seed(seed, i)));
  return out;
}

std::vector<LabelMap2> load_masks(const fs::path& dir) {
  std::vector<LabelMap2> out;
  for (auto& m : read_mask_dataset(dir)) out.push_back(std::move(m.map));
  require(!out.empty(), ErrorCode::kIo, "no masks found in " + dir.string());
  return out;
}

namespace {

void say(const MaskSources& s, const std::string& msg) {
  if (s.log) s.log(msg);
}

void store(const MaskSources& s, const std::string& source, const std::vector<LabelMap2>& masks, std::uint64_t seed,
           const std::string& generator) {
  if (s.write_dir.empty()) return;
  const fs::path dir = s.write_dir / source;
  for (std::size_t i = 0; i < masks.size(); ++i)
    write_mask(dir, i, masks[i], {masks[i].spacing_mm, "forearm", derive_seed(seed, i), generator});
}

bool needs(const std::vector<DatasetConfig>& configs, const std::string& source) {
  for (auto c : configs) {
    const std::string n = to_string(c);
    if (n == source || n.find(source) != std::string::npos) return true;
  }
  return false;
}

}  // namespace

MaskSet prepare_masks(const RunConfig& config, const std::vector<DatasetConfig>& configs, const MaskSources& sources) {
  const std::uint64_t seed = config.seed();
  const MaskPools want = config.pools();
  const bool need_gan = needs(configs, "gan");
  MaskSet set;

  // The shared test split always comes from the annotation pool.
  {
    const fs::path dir = sources.anno_dir.empty() ? config.annotation_dir() : sources.anno_dir;
    if (!dir.empty()) {
      set.anno = load_masks(dir);
      say(sources, "loaded " + std::to_string(set.anno.size()) + " annotation masks from " + dir.string());
    } else {
      const std::uint64_t s = stage_seed(seed, "masks/anno");
      set.anno = generate_masks(config.annotation_geometry(), want.anno, s);
      store(sources, "anno", set.anno, s, "annotation");
      say(sources, "generated " + std::to_string(set.anno.size()) + " annotation stand-in masks");
    }
  }
  if (needs(configs, "lit")) {
    if (!sources.lit_dir.empty()) {
      set.lit = load_masks(sources.lit_dir);
    } else {
      const std::uint64_t s = stage_seed(seed, "masks/lit");
      set.lit = generate_masks(config.geometry(), want.lit, s);
      store(sources, "lit", set.lit, s, "literature");
      say(sources, "generated " + std::to_string(set.lit.size()) + " literature masks");
    }
  }
  if (need_gan) {
    if (!sources.gan_dir.empty()) {
      set.gan = load_masks(sources.gan_dir);
    } else {
      // Train only on masks outside the shared test split.
      const DatasetManifest anno =
          build_dataset(DatasetConfig::kAnno, set.sizes(), stage_seed(seed, "dataset"), config.dataset_scale());
      std::vector<LabelMap2> train;
      for (const auto* split : {&anno.train, &anno.val})
        for (const auto& id : *split) train.push_back(set.anno[id.index]);
      say(sources, "training GAN on " + std::to_string(train.size()) + " annotation masks (flip augmented)");
      GanTrainOptions opts = config.gan_training();
      if (!sources.write_dir.empty()) opts.out_dir = sources.write_dir / "gan_model";
      opts.on_epoch = [&](const GanEpochRecord& r) {
        if (r.epoch % 10 == 0)
          say(sources, "gan epoch " + std::to_string(r.epoch) + " d_loss " + std::to_string(r.d_loss) + " g_loss " +
                           std::to_string(r.g_loss));
      };
      GanTrainResult gan = train_gan(hflip_copy_augment(train), config.gan(), stage_seed(seed, "gan"), opts);
      const std::uint64_t s = stage_seed(seed, "masks/gan");
      set.gan = sample_masks(gan.model, want.gan, s);
      store(sources, "gan", set.gan, s, "gan");
      say(sources, "sampled " + std::to_string(set.gan.size()) + " GAN masks after " + std::to_string(gan.steps) +
                       " steps");
    }
  }
  return set;
}

ExperimentSpec experiment_spec(const RunConfig& config, const MaskSet& masks, const ChromophoreSpectra& spectra) {
  const std::uint64_t seed = config.seed();
  const std::uint64_t data_seed = stage_seed(seed, "dataset");
  const double scale = config.dataset_scale();
  ExperimentSpec spec;
  for (const auto& name : config.variants()) {
    DatasetManifest m = build_dataset(dataset_config_from_string(name), masks.sizes(), data_seed, scale);
    spec.variants.push_back({name, std::move(m)});
  }
  spec.test = build_dataset(DatasetConfig::kAnno, masks.sizes(), data_seed, scale).test;
  spec.masks = masks.lookup();
  spec.synthesis = config.synthesis(spectra);
  spec.data_seed = data_seed;
  spec.unet = config.unet();
  spec.training = config.unet_training();
  spec.train_seed = stage_seed(seed, "unet");
  spec.rankings = config.rankings();
  spec.n_boot = config.n_boot();
  spec.boot_seed = stage_seed(seed, "rank");
  return spec;
}

}  // namespace pasyn
