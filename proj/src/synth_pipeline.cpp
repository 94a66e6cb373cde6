#include "pasyn/synth_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>

#include "pasyn/error.hpp"
#include "pasyn/volume_io.hpp"

namespace pasyn {

namespace fs = std::filesystem;

WavelengthGrid WavelengthGrid::paper_default() {
  WavelengthGrid g;
  for (int nm = 700; nm <= 850; nm += 10) g.nm.push_back(nm);
  return g;
}

void WavelengthGrid::validate() const {
  require(!nm.empty(), ErrorCode::kInvalidParams, "wavelength grid is empty");
  for (std::size_t i = 1; i < nm.size(); ++i)
    require(nm[i] > nm[i - 1], ErrorCode::kInvalidParams, "wavelength grid must be strictly increasing");
}

MultispectralImage::MultispectralImage(Shape2 s, std::vector<double> wavelengths, double spacing, std::string kind_)
    : shape(s),
      spacing_mm(spacing),
      wavelengths_nm(std::move(wavelengths)),
      kind(std::move(kind_)),
      data(Eigen::ArrayXf::Zero(static_cast<Eigen::Index>(s.size() * wavelengths_nm.size()))) {}

void write_vol16(const fs::path& path, const MultispectralImage& img) {
  require(img.data.allFinite(), ErrorCode::kNonFinite, "write_vol16: image has non-finite values");
  write_float_payload(path, img.data.data(), static_cast<std::size_t>(img.data.size()));
  nlohmann::json j = {{"shape", {img.shape.x, img.shape.z, img.channels()}},
                      {"spacing_mm", img.spacing_mm},
                      {"wavelengths_nm", img.wavelengths_nm},
                      {"kind", img.kind},
                      {"dtype", "float32-le"},
                      {"order", "x-fastest, then z, then wavelength"},
                      {"provenance",
                       {{"mask_id", img.provenance.mask_id},
                        {"instance_seed", img.provenance.instance_seed},
                        {"sim_seed", img.provenance.sim_seed},
                        {"noise_seed", img.provenance.noise_seed}}}};
  write_json(header_path(path), j);
}

MultispectralImage read_vol16(const fs::path& path) {
  const auto j = read_json(header_path(path));
  MultispectralImage img;
  try {
    const auto shape = j.at("shape");
    img.shape = {shape.at(0).get<int>(), shape.at(1).get<int>()};
    img.wavelengths_nm = j.at("wavelengths_nm").get<std::vector<double>>();
    require(shape.at(2).get<int>() == img.channels(), ErrorCode::kIo, path.string() + ": channel count mismatch");
    img.spacing_mm = j.at("spacing_mm").get<double>();
    img.kind = j.value("kind", std::string());
    if (j.contains("provenance")) {
      const auto& p = j["provenance"];
      img.provenance.mask_id = p.value("mask_id", std::string());
      img.provenance.instance_seed = p.value("instance_seed", std::uint64_t{0});
      img.provenance.sim_seed = p.value("sim_seed", std::uint64_t{0});
      img.provenance.noise_seed = p.value("noise_seed", std::uint64_t{0});
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kIo, header_path(path).string() + ": " + e.what());
  }
  const auto payload = read_float_payload(path, img.shape.size() * img.wavelengths_nm.size());
  img.data = Eigen::Map<const Eigen::ArrayXf>(payload.data(), static_cast<Eigen::Index>(payload.size()));
  return img;
}

LabelMap3 extrude_mask(const LabelMap2& mask, int y_extent) {
  require(y_extent >= 1, ErrorCode::kInvalidParams, "extrude_mask: y_extent must be >= 1");
  const Shape2 s = mask.shape();
  LabelMap3 out(Shape3{s.x, y_extent, s.z}, mask.spacing_mm);
  for (int z = 0; z < s.z; ++z)
    for (int y = 0; y < y_extent; ++y)
      for (int x = 0; x < s.x; ++x) out(x, y, z) = mask(x, z);
  return out;
}

PlacedVolume place_in_volume(const LabelMap3& map, double offset_mm) {
  const Shape3 s = map.shape();
  int gel_top = -1;
  for (int z = 0; z < s.z && gel_top < 0; ++z)
    for (int y = 0; y < s.y && gel_top < 0; ++y)
      for (int x = 0; x < s.x; ++x)
        if (map(x, y, z) == id(TissueClass::kGel)) {
          gel_top = z;
          break;
        }
  require(gel_top >= 0, ErrorCode::kNoGelClass, "place_in_volume: map has no gel (class 4) voxel");
  const int target = static_cast<int>(std::lround(offset_mm / map.spacing_mm));
  const int pad = target - gel_top;
  require(pad >= 0, ErrorCode::kInvalidParams, "place_in_volume: gel already deeper than the requested offset");
  if (pad == 0) return {map, 0};

  PlacedVolume placed{LabelMap3(Shape3{s.x, s.y, s.z + pad}, map.spacing_mm, TissueClass::kHeavyWater), pad};
  const auto plane = static_cast<std::size_t>(s.x) * static_cast<std::size_t>(s.y);
  std::memcpy(placed.map.grid.data.data() + plane * static_cast<std::size_t>(pad), map.grid.data.data(),
              plane * static_cast<std::size_t>(s.z));
  return placed;
}

std::uint64_t wavelength_seed(std::uint64_t sim_seed, double nm) {
  return derive_seed(sim_seed, static_cast<std::uint64_t>(std::llround(nm * 1000.0)));
}

SimulationResult simulate_multispectral(const LabelMap2& mask, const TissueOpticalSpec& spec,
                                        const ChromophoreSpectra& spectra, const WavelengthGrid& grid,
                                        const SimulationSettings& settings, const SimulationSeeds& seeds,
                                        const std::string& mask_id) {
  grid.validate();
  const auto violations = validate_labelmap(mask);
  for (const auto& v : violations)
    require(v.kind != Violation::Kind::kUnknownId && v.kind != Violation::Kind::kBadSpacing, ErrorCode::kInvalidId,
            "simulate_multispectral: " + v.message);

  const PlacedVolume placed = place_in_volume(extrude_mask(mask, settings.y_extent), settings.water_offset_mm);
  const TissueInstance instance = sample_tissue_instance(spec, seeds.instance_seed);
  const Shape2 s = mask.shape();
  const int y_center = settings.y_extent / 2;

  SimulationResult result{MultispectralImage(s, grid.nm, mask.spacing_mm, "p0"),
                          MultispectralImage(s, grid.nm, mask.spacing_mm, "mua")};
  for (auto* img : {&result.p0, &result.mua}) img->provenance = {mask_id, seeds.instance_seed, seeds.sim_seed, 0};

  for (std::size_t k = 0; k < grid.size(); ++k) {
    const double nm = grid.nm[k];
    const OpticalVolume optics = assign_optics(placed.map, instance, spec, spectra, nm);
    SourceSpec source = settings.source;
    source.base_seed = wavelength_seed(seeds.sim_seed, nm);
    const FluenceVolume fluence = simulate_fluence(optics, source, settings.workers, settings.transport);
    const InitialPressureVolume p0 = initial_pressure(fluence, optics);
    const int c = static_cast<int>(k);
    for (int z = 0; z < s.z; ++z) {
      for (int x = 0; x < s.x; ++x) {
        result.p0(x, z, c) = p0.pressure(x, y_center, z + placed.pad_rows);
        result.mua(x, z, c) = optics.mua(x, y_center, z + placed.pad_rows);
      }
    }
  }
  return result;
}

MultispectralImage preprocess(const MultispectralImage& img, double sigma, std::uint64_t seed) {
  require(sigma >= 0.0, ErrorCode::kInvalidParams, "preprocess: sigma must be >= 0");
  MultispectralImage out = img;
  out.kind = "log_" + img.kind + (sigma > 0.0 ? "_noisy" : "");
  out.provenance.noise_seed = sigma > 0.0 ? seed : 0;
  out.data = img.data.max(static_cast<float>(kLogFloor)).log();
  if (sigma > 0.0) {
    Rng rng(seed);
    std::normal_distribution<double> noise(0.0, sigma);
    for (Eigen::Index i = 0; i < out.data.size(); ++i) out.data[i] += static_cast<float>(noise(rng));
  }
  return out;
}

}  // namespace pasyn
