#include "pasyn/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "pasyn/error.hpp"
#include "pasyn/rng.hpp"
#include "pasyn/volume_io.hpp"

namespace pasyn {

namespace fs = std::filesystem;

std::string to_string(DatasetConfig c) {
  switch (c) {
    case DatasetConfig::kAnno: return "anno";
    case DatasetConfig::kGan: return "gan";
    case DatasetConfig::kGanAnno: return "gan-anno";
    case DatasetConfig::kLit: return "lit";
    case DatasetConfig::kLitGanAnno: return "lit-gan-anno";
  }
  return "unknown";
}

DatasetConfig dataset_config_from_string(const std::string& name) {
  for (auto c : {DatasetConfig::kAnno, DatasetConfig::kGan, DatasetConfig::kGanAnno, DatasetConfig::kLit,
                 DatasetConfig::kLitGanAnno})
    if (to_string(c) == name) return c;
  fail(ErrorCode::kInvalidConfig, "unknown dataset config '" + name + "'");
}

SplitCounts reference_counts(DatasetConfig c) {
  switch (c) {
    case DatasetConfig::kAnno: return {66, 12, 18};
    case DatasetConfig::kGan:
    case DatasetConfig::kGanAnno:
    case DatasetConfig::kLit: return {350, 50, 100};
    case DatasetConfig::kLitGanAnno: return {766, 112, 218};
  }
  return {};
}

SplitCounts split_70_10_20(int n) {
  const int val = static_cast<int>(std::lround(0.1 * n));
  const int test = static_cast<int>(std::lround(0.2 * n));
  return {n - val - test, val, test};
}

std::string SampleId::str() const {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s:%05zu", source.c_str(), index);
  return buf;
}

SampleId SampleId::parse(const std::string& s) {
  const auto colon = s.find(':');
  require(colon != std::string::npos && colon > 0 && colon + 1 < s.size(), ErrorCode::kInvalidConfig,
          "malformed sample id '" + s + "'");
  return {s.substr(0, colon), static_cast<std::size_t>(std::stoull(s.substr(colon + 1)))};
}

const std::vector<SampleId>& DatasetManifest::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "val") return val;
  if (name == "test") return test;
  if (name == "target_test") return target_test;
  fail(ErrorCode::kInvalidConfig, "unknown split '" + name + "'");
}

nlohmann::json DatasetManifest::to_json() const {
  auto ids = [](const std::vector<SampleId>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& s : v) a.push_back(s.str());
    return a;
  };
  const SplitCounts c = counts();
  return {{"config", config},
          {"seed", seed},
          {"counts", {{"train", c.train}, {"val", c.val}, {"test", c.test}}},
          {"source_mix", source_mix},
          {"train", ids(train)},
          {"val", ids(val)},
          {"test", ids(test)},
          {"target_test", ids(target_test)}};
}

DatasetManifest DatasetManifest::from_json(const nlohmann::json& j) {
  DatasetManifest m;
  auto ids = [](const nlohmann::json& a) {
    std::vector<SampleId> v;
    for (const auto& s : a) v.push_back(SampleId::parse(s.get<std::string>()));
    return v;
  };
  try {
    m.config = j.at("config").get<std::string>();
    m.seed = j.value("seed", std::uint64_t{0});
    m.train = ids(j.at("train"));
    m.val = ids(j.at("val"));
    m.test = ids(j.at("test"));
    if (j.contains("target_test")) m.target_test = ids(j["target_test"]);
    if (j.contains("source_mix")) m.source_mix = j["source_mix"].get<std::map<std::string, double>>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kInvalidConfig, std::string("manifest: ") + e.what());
  }
  return m;
}

namespace {

struct SourceSplit {
  std::vector<SampleId> train, val, test;
};

// Shuffles the pool with a source-specific stream and cuts it into splits.
SourceSplit split_source(const std::string& source, std::size_t pool, SplitCounts counts, std::uint64_t seed) {
  require(pool >= static_cast<std::size_t>(counts.total()), ErrorCode::kInsufficientPool,
          source + " pool has " + std::to_string(pool) + " masks, " + std::to_string(counts.total()) + " required");
  std::vector<std::size_t> order(pool);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, fnv1a64(source)));
  std::shuffle(order.begin(), order.end(), rng);
  SourceSplit s;
  std::size_t k = 0;
  for (int i = 0; i < counts.train; ++i) s.train.push_back({source, order[k++]});
  for (int i = 0; i < counts.val; ++i) s.val.push_back({source, order[k++]});
  for (int i = 0; i < counts.test; ++i) s.test.push_back({source, order[k++]});
  return s;
}

void append(std::vector<SampleId>& dst, const std::vector<SampleId>& src, std::size_t count) {
  dst.insert(dst.end(), src.begin(), src.begin() + static_cast<std::ptrdiff_t>(count));
}

// Mixes `total` samples: annotation share rounded up, capped by what the
// annotation split holds, the rest from the GAN split.
void mix_split(std::vector<SampleId>& dst, const std::vector<SampleId>& anno, const std::vector<SampleId>& gan,
               std::size_t total) {
  const auto want = static_cast<std::size_t>(std::ceil(kAnnoShare * static_cast<double>(total) - 1e-9));
  const std::size_t from_anno = std::min(want, anno.size());
  require(gan.size() >= total - from_anno, ErrorCode::kInsufficientPool, "gan split too small for the mixed config");
  append(dst, anno, from_anno);
  append(dst, gan, total - from_anno);
}

void fill_mix(DatasetManifest& m) {
  std::map<std::string, double> counts;
  std::size_t total = 0;
  for (const auto* split : {&m.train, &m.val, &m.test})
    for (const auto& id : *split) {
      counts[id.source] += 1.0;
      ++total;
    }
  for (auto& [k, v] : counts) v /= static_cast<double>(total);
  m.source_mix = counts;
}

}  // namespace

SplitCounts scale_counts(SplitCounts c, double scale) {
  require(scale > 0.0 && scale <= 1.0, ErrorCode::kInvalidParams, "dataset scale must lie in (0, 1]");
  if (scale == 1.0) return c;
  auto f = [scale](int n) { return std::max(1, static_cast<int>(std::lround(scale * n))); };
  return {f(c.train), f(c.val), f(c.test)};
}

DatasetManifest build_dataset(DatasetConfig config, const MaskPools& pools, std::uint64_t seed, double scale) {
  const SplitCounts ref = scale_counts(reference_counts(DatasetConfig::kGan), scale);
  DatasetManifest m;
  m.config = to_string(config);
  m.seed = seed;

  const bool needs_anno = config != DatasetConfig::kGan && config != DatasetConfig::kLit;
  const bool needs_gan = config != DatasetConfig::kAnno && config != DatasetConfig::kLit;
  const bool needs_lit = config == DatasetConfig::kLit || config == DatasetConfig::kLitGanAnno;
  SourceSplit anno, gan, lit;
  if (needs_anno)
    anno = split_source("anno", pools.anno, scale_counts(reference_counts(DatasetConfig::kAnno), scale), seed);
  if (needs_gan) gan = split_source("gan", pools.gan, ref, seed);
  if (needs_lit) lit = split_source("lit", pools.lit, ref, seed);

  switch (config) {
    case DatasetConfig::kAnno:
      m.train = anno.train;
      m.val = anno.val;
      m.test = anno.test;
      break;
    case DatasetConfig::kGan:
      m.train = gan.train;
      m.val = gan.val;
      m.test = gan.test;
      break;
    case DatasetConfig::kLit:
      m.train = lit.train;
      m.val = lit.val;
      m.test = lit.test;
      break;
    case DatasetConfig::kGanAnno:
      mix_split(m.train, anno.train, gan.train, static_cast<std::size_t>(ref.train));
      mix_split(m.val, anno.val, gan.val, static_cast<std::size_t>(ref.val));
      mix_split(m.test, anno.test, gan.test, static_cast<std::size_t>(ref.test));
      break;
    case DatasetConfig::kLitGanAnno:
      for (const SourceSplit* s : {&anno, &gan, &lit}) {
        append(m.train, s->train, s->train.size());
        append(m.val, s->val, s->val.size());
        append(m.test, s->test, s->test.size());
      }
      break;
  }
  if (needs_anno) m.target_test = anno.test;
  fill_mix(m);
  return m;
}

DatasetManifest build_custom_dataset(const std::string& name, const std::string& source, std::size_t pool,
                                     std::uint64_t seed) {
  const SourceSplit s = split_source(source, pool, split_70_10_20(static_cast<int>(pool)), seed);
  DatasetManifest m;
  m.config = name;
  m.seed = seed;
  m.train = s.train;
  m.val = s.val;
  m.test = s.test;
  fill_mix(m);
  return m;
}

SampleSeeds sample_seeds(std::uint64_t dataset_seed, const SampleId& id) {
  const std::uint64_t base = derive_seed(dataset_seed, fnv1a64(id.str()));
  return {derive_seed(base, 0), derive_seed(base, 1), derive_seed(base, 2)};
}

std::string sample_dir_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "sample_%05zu", index);
  return buf;
}

void write_sample(const fs::path& dir, const LabelMap2& mask, const SampleId& id, const SynthesisSettings& settings,
                  std::uint64_t dataset_seed) {
  require(settings.spectra != nullptr, ErrorCode::kInvalidParams, "write_sample: spectra not set");
  const SampleSeeds seeds = sample_seeds(dataset_seed, id);
  const SimulationResult sim = simulate_multispectral(mask, settings.optics, *settings.spectra, settings.grid,
                                                      settings.simulation, {seeds.instance, seeds.sim}, id.str());
  fs::create_directories(dir);
  write_vol16(dir / "input.vol16", preprocess(sim.p0, settings.noise_sigma, seeds.noise));
  write_vol16(dir / "gt_mua.vol16", preprocess(sim.mua, 0.0, 0));
  write_mask_png(mask, dir / "mask.png");
  write_json(dir / "meta.json", {{"sample_id", id.str()},
                                 {"spacing_mm", mask.spacing_mm},
                                 {"instance_seed", seeds.instance},
                                 {"sim_seed", seeds.sim},
                                 {"noise_seed", seeds.noise},
                                 {"noise_sigma", settings.noise_sigma},
                                 {"photons_per_wavelength", settings.simulation.source.photon_count},
                                 {"wavelengths_nm", settings.grid.nm}});
}

void synthesize_dataset(const fs::path& root, const DatasetManifest& manifest, const MaskLookup& masks,
                        const SynthesisSettings& settings) {
  const fs::path base = root / manifest.config;
  fs::create_directories(base);
  for (const std::string split : {"train", "val", "test"}) {
    const auto& ids = manifest.split(split);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const auto it = masks.find(ids[i].source);
      require(it != masks.end() && ids[i].index < it->second->size(), ErrorCode::kInsufficientPool,
              "no mask for sample " + ids[i].str());
      write_sample(base / split / sample_dir_name(i), (*it->second)[ids[i].index], ids[i], settings, manifest.seed);
    }
  }
  write_json(base / "manifest.json", manifest.to_json());
}

std::vector<fs::path> list_samples(const fs::path& split_dir) {
  require(fs::is_directory(split_dir), ErrorCode::kIo, "split directory not found: " + split_dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(split_dir))
    if (e.is_directory() && e.path().filename().string().rfind("sample_", 0) == 0) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace pasyn
