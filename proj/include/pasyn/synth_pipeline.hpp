#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pasyn/geometry.hpp"
#include "pasyn/photon_mc.hpp"
#include "pasyn/tissue_optics.hpp"

namespace pasyn {

struct WavelengthGrid {
  std::vector<double> nm;

  // 700, 710, ..., 850.
  static WavelengthGrid paper_default();
  std::size_t size() const { return nm.size(); }
  void validate() const;
};

struct Provenance {
  std::string mask_id;
  std::uint64_t instance_seed = 0;
  std::uint64_t sim_seed = 0;
  std::uint64_t noise_seed = 0;
};

// (X, Z, channel) stack, x fastest, then z, then channel. A channel plane
// has the memory layout of an (H = Z, W = X) image.
struct MultispectralImage {
  Shape2 shape;
  double spacing_mm = 0.16;
  std::vector<double> wavelengths_nm;
  std::string kind;  // p0 | log_p0_noisy | mua | log_mua | pred_log_mua
  Provenance provenance;
  Eigen::ArrayXf data;

  MultispectralImage() = default;
  MultispectralImage(Shape2 s, std::vector<double> wavelengths, double spacing, std::string kind_);

  int channels() const { return static_cast<int>(wavelengths_nm.size()); }
  Eigen::Index plane() const { return static_cast<Eigen::Index>(shape.size()); }
  float& operator()(int x, int z, int c) { return data[c * plane() + Eigen::Index(z) * shape.x + x]; }
  float operator()(int x, int z, int c) const { return data[c * plane() + Eigen::Index(z) * shape.x + x]; }
  auto channel(int c) { return data.segment(c * plane(), plane()); }
  auto channel(int c) const { return data.segment(c * plane(), plane()); }
};

void write_vol16(const std::filesystem::path& path, const MultispectralImage& img);
MultispectralImage read_vol16(const std::filesystem::path& path);

// Stacks the mask along y.
LabelMap3 extrude_mask(const LabelMap2& mask, int y_extent);

struct PlacedVolume {
  LabelMap3 map;
  int pad_rows = 0;  // heavy-water rows added above the original mask
};

// Pads with heavy water so the topmost gel voxel sits `offset_mm` below the
// top face. Throws no-gel-class.
PlacedVolume place_in_volume(const LabelMap3& map, double offset_mm = 43.2);

struct SimulationSettings {
  int y_extent = 32;
  double water_offset_mm = 43.2;
  SourceSpec source;  // photon_count is per wavelength; base_seed is ignored
  TransportOptions transport;
  int workers = 1;
};

struct SimulationSeeds {
  std::uint64_t instance_seed = 0;
  std::uint64_t sim_seed = 0;
};

struct SimulationResult {
  MultispectralImage p0;   // center x-z slice, padding removed
  MultispectralImage mua;  // ground truth, same slice
};

// Seed of the wavelength-`nm` run for a given simulation seed.
std::uint64_t wavelength_seed(std::uint64_t sim_seed, double nm);

SimulationResult simulate_multispectral(const LabelMap2& mask, const TissueOpticalSpec& spec,
                                        const ChromophoreSpectra& spectra, const WavelengthGrid& grid,
                                        const SimulationSettings& settings, const SimulationSeeds& seeds,
                                        const std::string& mask_id = {});

inline constexpr double kLogFloor = 1e-10;

// ln(max(v, 1e-10)) followed by additive N(0, sigma^2) noise per pixel.
MultispectralImage preprocess(const MultispectralImage& img, double sigma, std::uint64_t seed);

}  // namespace pasyn
