#include "doctest.h"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>

#include "pasyn/dataset.hpp"
#include "pasyn/mask_io.hpp"
#include "pasyn/synth_pipeline.hpp"

using namespace pasyn;
namespace fs = std::filesystem;

namespace {

LabelMap2 small_mask(std::uint64_t seed) {
  ForearmModelParams p;
  p.image_shape = {16, 12};
  p.spacing_mm = 0.8;
  p.water_thickness_mm = {0.8, 1.6};
  p.membrane_thickness_mm = 0.8;
  p.gel_thickness_mm = {0.8, 1.6};
  p.surface_curvature_mm = {0.0, 0.0};
  p.skin_thickness_mm = {0.8, 1.6};
  p.vessel_count = {1, 2};
  p.vessel_radius_mm = {0.8, 1.6};
  p.vessel_depth_mm = {0.8, 2.0};
  return generate_forearm_labelmap(p, seed);
}

SimulationSettings fast_settings() {
  SimulationSettings s;
  s.y_extent = 4;
  s.water_offset_mm = 4.0;
  s.source.photon_count = 300;
  s.source.aperture_x_mm = 12.0;
  return s;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

bool disjoint(const DatasetManifest& m) {
  std::set<std::string> seen;
  for (const auto* split : {&m.train, &m.val, &m.test})
    for (const auto& id : *split)
      if (!seen.insert(id.str()).second) return false;
  return true;
}

}  // namespace

TEST_CASE("default wavelength grid") {
  const WavelengthGrid g = WavelengthGrid::paper_default();
  REQUIRE(g.size() == 16);
  CHECK(g.nm.front() == 700.0);
  CHECK(g.nm.back() == 850.0);
  CHECK_NOTHROW(g.validate());
  const WavelengthGrid dup{{700.0, 700.0}};
  CHECK_THROWS_AS(dup.validate(), Error);
}

TEST_CASE("extrusion stacks the mask along y") {
  const LabelMap2 m = generate_forearm_labelmap(ForearmModelParams{}, 4);
  const LabelMap3 v = extrude_mask(m, 6);
  CHECK(v.shape() == Shape3{128, 6, 64});
  for (int y = 0; y < 6; ++y)
    for (int z = 0; z < 64; ++z)
      for (int x = 0; x < 128; ++x) REQUIRE(v(x, y, z) == m(x, z));
  const auto h2 = class_histogram(m);
  const auto h3 = class_histogram(v);
  for (std::size_t c = 0; c < h2.size(); ++c) CHECK(h3[c] == 6 * h2[c]);

  ForearmModelParams full_res;
  full_res.image_shape = {256, 128};
  full_res.spacing_mm = 0.16;
  CHECK(extrude_mask(generate_forearm_labelmap(full_res, 1), 64).shape() == Shape3{256, 64, 128});
  CHECK_THROWS_AS(extrude_mask(m, 0), Error);
}

TEST_CASE("placement pads heavy water above the gel") {
  LabelMap3 m(Shape3{4, 2, 10}, 0.16, TissueClass::kMuscle);
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 4; ++x) {
      m(x, y, 0) = id(TissueClass::kHeavyWater);
      m(x, y, 1) = id(TissueClass::kMembrane);
      m(x, y, 2) = id(TissueClass::kGel);
    }
  const PlacedVolume p = place_in_volume(m);
  CHECK(p.pad_rows + 2 == 270);
  CHECK(p.map.shape().z == 10 + p.pad_rows);
  for (int z = 0; z < p.pad_rows; ++z) CHECK(p.map(1, 1, z) == id(TissueClass::kHeavyWater));
  int gel_top = -1;
  for (int z = 0; z < p.map.shape().z && gel_top < 0; ++z)
    if (p.map(0, 0, z) == id(TissueClass::kGel)) gel_top = z;
  CHECK(gel_top == 270);

  const PlacedVolume again = place_in_volume(p.map);
  CHECK(again.pad_rows == 0);
  CHECK(again.map == p.map);

  const LabelMap3 no_gel(Shape3{2, 2, 2}, 0.16, TissueClass::kMuscle);
  try {
    place_in_volume(no_gel);
    FAIL("expected no-gel-class");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kNoGelClass);
  }
}

TEST_CASE("multispectral simulation shapes and channel independence") {
  const LabelMap2 mask = small_mask(3);
  const auto& spectra = shipped_spectra();
  const TissueOpticalSpec spec = default_tissue_spec();
  const SimulationSettings settings = fast_settings();
  const WavelengthGrid grid{{700.0, 760.0, 850.0}};
  const SimulationResult r = simulate_multispectral(mask, spec, spectra, grid, settings, {11, 12}, "anno:00003");
  CHECK(r.p0.shape == mask.shape());
  CHECK(r.p0.channels() == 3);
  CHECK(r.mua.shape == mask.shape());
  CHECK(r.p0.wavelengths_nm == grid.nm);
  CHECK(r.p0.data.allFinite());
  CHECK((r.mua.data > 0.0f).all());
  CHECK(r.p0.provenance.mask_id == "anno:00003");

  const SimulationResult single =
      simulate_multispectral(mask, spec, spectra, WavelengthGrid{{760.0}}, settings, {11, 12});
  CHECK((single.p0.channel(0) == r.p0.channel(1)).all());
  CHECK((single.mua.channel(0) == r.mua.channel(1)).all());

  // Ground truth follows the class partition of the mask.
  const TissueInstance inst = sample_tissue_instance(spec, 11);
  for (int z = 0; z < mask.shape().z; ++z)
    for (int x = 0; x < mask.shape().x; ++x) {
      const auto c = static_cast<TissueClass>(mask(x, z));
      CHECK(r.mua(x, z, 2) == static_cast<float>(mixed_mua(inst, spec, c, 850.0, spectra)));
    }

  const SimulationResult again = simulate_multispectral(mask, spec, spectra, grid, settings, {11, 12});
  CHECK((again.p0.data == r.p0.data).all());
}

TEST_CASE("preprocess log transform and noise statistics") {
  MultispectralImage img(Shape2{200, 100}, {700.0, 710.0}, 0.16, "p0");
  img.data.setConstant(2.0f);
  img.data[0] = 0.0f;
  const MultispectralImage clean = preprocess(img, 0.0, 1);
  CHECK(clean.kind == "log_p0");
  CHECK(clean.data[0] == doctest::Approx(std::log(1e-10)).epsilon(1e-6));
  CHECK(clean.data[1] == doctest::Approx(std::log(2.0)));

  const MultispectralImage noisy = preprocess(img, 0.5, 7);
  CHECK(noisy.kind == "log_p0_noisy");
  const Eigen::ArrayXd d = (noisy.data - clean.data).cast<double>();
  const double mean = d.mean();
  const double sd = std::sqrt((d - mean).square().sum() / static_cast<double>(d.size() - 1));
  CHECK(std::abs(mean) < 0.01);
  CHECK(std::abs(sd - 0.5) < 0.01);
  CHECK(noisy.data.allFinite());
  CHECK_THROWS_AS(preprocess(img, -1.0, 1), Error);
}

TEST_CASE("vol16 round trip") {
  const fs::path p = fs::temp_directory_path() / "pasyn_test_img.vol16";
  MultispectralImage img(Shape2{5, 3}, {700.0, 800.0}, 0.32, "log_mua");
  for (Eigen::Index i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<float>(i) * 0.5f - 3.0f;
  img.provenance = {"gan:00001", 4, 5, 6};
  write_vol16(p, img);
  const MultispectralImage back = read_vol16(p);
  CHECK(back.shape == img.shape);
  CHECK(back.wavelengths_nm == img.wavelengths_nm);
  CHECK(back.kind == img.kind);
  CHECK(back.provenance.mask_id == "gan:00001");
  CHECK((back.data == img.data).all());
  fs::remove(p);
  fs::remove(p.string() + ".json");
}

TEST_CASE("dataset configurations reproduce the reference counts") {
  const MaskPools pools{96, 500, 500};
  const std::vector<std::pair<DatasetConfig, SplitCounts>> expected = {
      {DatasetConfig::kAnno, {66, 12, 18}},      {DatasetConfig::kGan, {350, 50, 100}},
      {DatasetConfig::kGanAnno, {350, 50, 100}}, {DatasetConfig::kLit, {350, 50, 100}},
      {DatasetConfig::kLitGanAnno, {766, 112, 218}}};
  for (const auto& [config, counts] : expected) {
    const DatasetManifest m = build_dataset(config, pools, 42);
    CHECK(m.counts() == counts);
    CHECK(disjoint(m));
    CHECK(m.config == to_string(config));
  }

  const DatasetManifest anno = build_dataset(DatasetConfig::kAnno, pools, 42);
  const DatasetManifest mixed = build_dataset(DatasetConfig::kGanAnno, pools, 42);
  CHECK(mixed.target_test == anno.test);
  auto anno_count = [](const std::vector<SampleId>& v) {
    return std::count_if(v.begin(), v.end(), [](const SampleId& s) { return s.source == "anno"; });
  };
  CHECK(anno_count(mixed.train) == 66);
  CHECK(anno_count(mixed.val) == 10);
  CHECK(anno_count(mixed.test) == 18);
  const double share = static_cast<double>(anno_count(mixed.train) + anno_count(mixed.val) + anno_count(mixed.test)) / 500.0;
  CHECK(share == doctest::Approx(0.19).epsilon(0.05));
}

TEST_CASE("dataset builder errors and determinism") {
  try {
    build_dataset(DatasetConfig::kGan, MaskPools{0, 100, 0}, 1);
    FAIL("expected insufficient-pool");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kInsufficientPool);
  }
  const MaskPools pools{96, 500, 500};
  const auto a = build_dataset(DatasetConfig::kLitGanAnno, pools, 5);
  const auto b = build_dataset(DatasetConfig::kLitGanAnno, pools, 5);
  CHECK(a.train == b.train);
  CHECK(a.to_json() == b.to_json());
  const auto c = build_dataset(DatasetConfig::kLitGanAnno, pools, 6);
  CHECK_FALSE(a.train == c.train);
  const auto back = DatasetManifest::from_json(a.to_json());
  CHECK(back.test == a.test);
  CHECK(back.source_mix == a.source_mix);

  for (int n : {10, 33, 96, 500, 1001}) {
    const SplitCounts s = split_70_10_20(n);
    CHECK(s.total() == n);
    CHECK(std::abs(s.train - 0.7 * n) <= 1.0);
    CHECK(std::abs(s.val - 0.1 * n) <= 1.0);
    CHECK(std::abs(s.test - 0.2 * n) <= 1.0);
  }
  CHECK(SampleId::parse("gan:00012") == SampleId{"gan", 12});
}

TEST_CASE("dataset synthesis writes the documented layout byte-reproducibly") {
  const fs::path root = fs::temp_directory_path() / "pasyn_test_ds";
  fs::remove_all(root);
  std::vector<LabelMap2> pool;
  for (std::uint64_t i = 0; i < 10; ++i) pool.push_back(small_mask(i));
  const DatasetManifest m = build_custom_dataset("toy", "lit", pool.size(), 3);
  SynthesisSettings settings;
  settings.optics = default_tissue_spec();
  settings.spectra = &shipped_spectra();
  settings.grid = WavelengthGrid{{750.0, 800.0}};
  settings.simulation = fast_settings();
  const MaskLookup lookup{{"lit", &pool}};
  synthesize_dataset(root, m, lookup, settings);

  const auto samples = list_samples(root / "toy" / "train");
  REQUIRE(samples.size() == 7);
  CHECK(list_samples(root / "toy" / "val").size() == 1);
  CHECK(list_samples(root / "toy" / "test").size() == 2);
  for (const char* f : {"input.vol16", "gt_mua.vol16", "mask.png", "meta.json"}) CHECK(fs::exists(samples[0] / f));
  CHECK(fs::exists(root / "toy" / "manifest.json"));

  const MultispectralImage input = read_vol16(samples[0] / "input.vol16");
  const MultispectralImage gt = read_vol16(samples[0] / "gt_mua.vol16");
  CHECK(input.shape == gt.shape);
  CHECK(input.wavelengths_nm == gt.wavelengths_nm);
  CHECK(read_mask_png(samples[0] / "mask.png", 0.8) == pool[m.train[0].index]);

  const std::string first = file_bytes(samples[3] / "input.vol16");
  const fs::path root2 = fs::temp_directory_path() / "pasyn_test_ds2";
  fs::remove_all(root2);
  synthesize_dataset(root2, m, lookup, settings);
  CHECK(file_bytes(root2 / "toy" / "train" / samples[3].filename() / "input.vol16") == first);
  fs::remove_all(root);
  fs::remove_all(root2);
}
