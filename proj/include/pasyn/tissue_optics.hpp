#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "pasyn/geometry.hpp"
#include "pasyn/grid.hpp"

namespace pasyn {

// Absorption spectrum sampled on a strictly increasing wavelength grid,
// linearly interpolated in between.
class SpectrumTable {
 public:
  SpectrumTable() = default;
  SpectrumTable(std::vector<double> wavelengths_nm, std::vector<double> mua_per_mm);

  // Throws out-of-grid outside [front, back].
  double operator()(double wavelength_nm) const;

  const std::vector<double>& wavelengths() const { return nm_; }
  const std::vector<double>& values() const { return mua_; }
  bool covers(double lo_nm, double hi_nm) const;

  // Whitespace-separated "nm mua" rows, '#' lines ignored.
  static SpectrumTable load(const std::filesystem::path& path);

 private:
  std::vector<double> nm_;
  std::vector<double> mua_;
};

struct ChromophoreSpectra {
  SpectrumTable oxyhemoglobin;
  SpectrumTable deoxyhemoglobin;
  SpectrumTable water;
  SpectrumTable fat;

  // Reads hbo2.txt, hb.txt, water.txt and fat.txt.
  static ChromophoreSpectra load(const std::filesystem::path& dir);
  void validate(double lo_nm = 700.0, double hi_nm = 850.0) const;
};

// Directory of shipped data: $PASYN_DATA_DIR, else the source tree's data/.
std::filesystem::path default_data_dir();
const ChromophoreSpectra& shipped_spectra();

// Melanin-like absorber, mua = fraction * 6.6e10 * nm^-3.33 per mm.
double melanin_mua(double wavelength_nm);

struct ClassOptics {
  UniformRange so2{0.7, 0.7};
  UniformRange blood_volume_fraction{0.0, 0.0};
  double water_fraction = 0.0;
  double fat_fraction = 0.0;
  double melanin_fraction = 0.0;
  // mus'(nm) = a * (nm / 500)^-b
  double scattering_a_per_mm = 0.1;
  double scattering_b = 0.0;
  double anisotropy = 0.9;
  double refractive_index = 1.33;

  double reduced_scattering(double wavelength_nm) const;
};

struct TissueOpticalSpec {
  std::array<std::optional<ClassOptics>, kNumClasses + 1> classes;  // index = class id

  const ClassOptics& at(TissueClass c) const;
  bool has(int class_id) const { return is_valid_class_id(class_id) && classes[static_cast<std::size_t>(class_id)]; }
  void validate() const;

  static TissueOpticalSpec load(const std::filesystem::path& yaml_path);
  void save(const std::filesystem::path& yaml_path) const;
};

TissueOpticalSpec default_tissue_spec();

struct ClassSample {
  double so2 = 0.0;
  double blood_volume_fraction = 0.0;
};

struct TissueInstance {
  std::array<std::optional<ClassSample>, kNumClasses + 1> classes;
  std::uint64_t seed = 0;

  const ClassSample& at(TissueClass c) const;
};

// One draw of (sO2, vb) per configured class, in class-id order.
TissueInstance sample_tissue_instance(const TissueOpticalSpec& spec, std::uint64_t seed);

double mixed_mua(const TissueInstance& instance, const TissueOpticalSpec& spec, TissueClass c, double wavelength_nm,
                 const ChromophoreSpectra& spectra);

// Same mixing rule for explicit parameters.
double mixed_mua(double so2, double blood_volume_fraction, const ClassOptics& optics, double wavelength_nm,
                 const ChromophoreSpectra& spectra);

struct OpticalVolume {
  Grid3<float> mua;  // 1/mm
  Grid3<float> mus;  // 1/mm
  Grid3<float> g;
  Grid3<float> n;
  double spacing_mm = 0.16;
  double wavelength_nm = 800.0;

  OpticalVolume() = default;
  OpticalVolume(Shape3 shape, double spacing, double wavelength);
  const Shape3& shape() const { return mua.shape; }

  // Throws invalid-volume when mua <= 0, mus < 0, g outside [-1, 1) or n < 1.
  void validate() const;
};

OpticalVolume assign_optics(const LabelMap3& labelmap, const TissueInstance& instance, const TissueOpticalSpec& spec,
                            const ChromophoreSpectra& spectra, double wavelength_nm);

}  // namespace pasyn
