#include "pasyn/tissue_optics.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "pasyn/error.hpp"

#ifndef PASYN_SOURCE_DATA_DIR
#define PASYN_SOURCE_DATA_DIR "data"
#endif

namespace pasyn {

namespace fs = std::filesystem;

SpectrumTable::SpectrumTable(std::vector<double> wavelengths_nm, std::vector<double> mua_per_mm)
    : nm_(std::move(wavelengths_nm)), mua_(std::move(mua_per_mm)) {
  require(nm_.size() == mua_.size() && nm_.size() >= 2, ErrorCode::kInvalidParams,
          "spectrum table needs at least two (nm, mua) rows");
  for (std::size_t i = 1; i < nm_.size(); ++i)
    require(nm_[i] > nm_[i - 1], ErrorCode::kInvalidParams, "spectrum wavelengths must be strictly increasing");
}

double SpectrumTable::operator()(double wavelength_nm) const {
  require(!nm_.empty() && wavelength_nm >= nm_.front() && wavelength_nm <= nm_.back(), ErrorCode::kOutOfGrid,
          "wavelength " + std::to_string(wavelength_nm) + " nm outside spectrum grid");
  const auto it = std::upper_bound(nm_.begin(), nm_.end(), wavelength_nm);
  if (it == nm_.end()) return mua_.back();
  const auto hi = static_cast<std::size_t>(it - nm_.begin());
  const auto lo = hi - 1;
  const double t = (wavelength_nm - nm_[lo]) / (nm_[hi] - nm_[lo]);
  return (1.0 - t) * mua_[lo] + t * mua_[hi];
}

bool SpectrumTable::covers(double lo_nm, double hi_nm) const {
  return !nm_.empty() && nm_.front() <= lo_nm && nm_.back() >= hi_nm;
}

SpectrumTable SpectrumTable::load(const fs::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open spectrum file " + path.string());
  std::vector<double> nm;
  std::vector<double> mua;
  std::string line;
  while (std::getline(in, line)) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream row(line);
    double a = 0.0;
    double b = 0.0;
    require(static_cast<bool>(row >> a >> b), ErrorCode::kIo, "malformed row in " + path.string() + ": " + line);
    nm.push_back(a);
    mua.push_back(b);
  }
  return SpectrumTable(std::move(nm), std::move(mua));
}

ChromophoreSpectra ChromophoreSpectra::load(const fs::path& dir) {
  ChromophoreSpectra s;
  s.oxyhemoglobin = SpectrumTable::load(dir / "hbo2.txt");
  s.deoxyhemoglobin = SpectrumTable::load(dir / "hb.txt");
  s.water = SpectrumTable::load(dir / "water.txt");
  s.fat = SpectrumTable::load(dir / "fat.txt");
  s.validate();
  return s;
}

void ChromophoreSpectra::validate(double lo_nm, double hi_nm) const {
  for (const SpectrumTable* t : {&oxyhemoglobin, &deoxyhemoglobin, &water, &fat}) {
    require(t->covers(lo_nm, hi_nm), ErrorCode::kInvalidParams, "spectrum does not cover the wavelength range");
    for (std::size_t i = 0; i < t->wavelengths().size(); ++i) {
      const double nm = t->wavelengths()[i];
      if (nm >= lo_nm && nm <= hi_nm)
        require(t->values()[i] > 0.0, ErrorCode::kInvalidParams, "spectrum has non-positive absorption");
    }
  }
}

fs::path default_data_dir() {
  if (const char* env = std::getenv("PASYN_DATA_DIR"); env != nullptr && *env != '\0') return fs::path(env);
  return fs::path(PASYN_SOURCE_DATA_DIR);
}

const ChromophoreSpectra& shipped_spectra() {
  static const ChromophoreSpectra spectra = ChromophoreSpectra::load(default_data_dir() / "spectra");
  return spectra;
}

double melanin_mua(double wavelength_nm) { return 6.6e10 * std::pow(wavelength_nm, -3.33); }

double ClassOptics::reduced_scattering(double wavelength_nm) const {
  return scattering_a_per_mm * std::pow(wavelength_nm / 500.0, -scattering_b);
}

const ClassOptics& TissueOpticalSpec::at(TissueClass c) const {
  const auto& entry = classes[id(c)];
  require(entry.has_value(), ErrorCode::kMissingClass,
          "tissue spec has no entry for class " + std::string(class_name(c)));
  return *entry;
}

void TissueOpticalSpec::validate() const {
  for (int cid = 1; cid <= kNumClasses; ++cid) {
    if (!classes[static_cast<std::size_t>(cid)]) continue;
    const ClassOptics& o = *classes[static_cast<std::size_t>(cid)];
    const std::string name(class_name(static_cast<TissueClass>(cid)));
    auto frac = [](double v) { return v >= 0.0 && v <= 1.0; };
    require(frac(o.so2.lo) && frac(o.so2.hi) && o.so2.lo <= o.so2.hi, ErrorCode::kInvalidParams,
            name + ": so2 support must lie in [0, 1]");
    require(frac(o.blood_volume_fraction.lo) && frac(o.blood_volume_fraction.hi) &&
                o.blood_volume_fraction.lo <= o.blood_volume_fraction.hi,
            ErrorCode::kInvalidParams, name + ": blood volume fraction must lie in [0, 1]");
    require(frac(o.water_fraction) && frac(o.fat_fraction) && frac(o.melanin_fraction), ErrorCode::kInvalidParams,
            name + ": fractions must lie in [0, 1]");
    require(o.blood_volume_fraction.hi + o.water_fraction + o.fat_fraction <= 1.0 + 1e-12, ErrorCode::kInvalidParams,
            name + ": vb + water + fat exceeds 1");
    require(o.anisotropy >= -1.0 && o.anisotropy < 1.0, ErrorCode::kInvalidParams, name + ": g outside [-1, 1)");
    require(o.scattering_a_per_mm > 0.0, ErrorCode::kInvalidParams, name + ": scattering a must be positive");
    require(o.refractive_index >= 1.0, ErrorCode::kInvalidParams, name + ": refractive index below 1");
  }
}

namespace {

UniformRange read_range(const YAML::Node& node, const std::string& what) {
  if (node.IsScalar()) {
    const double v = node.as<double>();
    return {v, v};
  }
  require(node.IsSequence() && node.size() == 2, ErrorCode::kInvalidConfig, what + ": expected value or [lo, hi]");
  return {node[0].as<double>(), node[1].as<double>()};
}

YAML::Node write_range(const UniformRange& r) {
  YAML::Node n;
  n.SetStyle(YAML::EmitterStyle::Flow);
  n.push_back(r.lo);
  n.push_back(r.hi);
  return n;
}

}  // namespace

TissueOpticalSpec TissueOpticalSpec::load(const fs::path& yaml_path) {
  YAML::Node root;
  try {
    root = YAML::LoadFile(yaml_path.string());
  } catch (const YAML::Exception& e) {
    fail(ErrorCode::kInvalidConfig, "cannot parse " + yaml_path.string() + ": " + e.what());
  }
  require(root["classes"] && root["classes"].IsMap(), ErrorCode::kInvalidConfig,
          yaml_path.string() + ": missing 'classes' map");
  static const std::vector<std::string> known = {"so2",          "blood_volume_fraction", "water_fraction",
                                                 "fat_fraction", "melanin_fraction",      "scattering_a_per_mm",
                                                 "scattering_b", "anisotropy",            "refractive_index"};
  TissueOpticalSpec spec;
  for (const auto& kv : root["classes"]) {
    const auto name = kv.first.as<std::string>();
    const auto cls = class_from_name(name);
    require(cls.has_value(), ErrorCode::kInvalidConfig, "unknown tissue class '" + name + "'");
    const YAML::Node& n = kv.second;
    for (const auto& field : n) {
      const auto key = field.first.as<std::string>();
      require(std::find(known.begin(), known.end(), key) != known.end(), ErrorCode::kInvalidConfig,
              name + ": unknown key '" + key + "'");
    }
    ClassOptics o;
    try {
      if (n["so2"]) o.so2 = read_range(n["so2"], name + ".so2");
      if (n["blood_volume_fraction"])
        o.blood_volume_fraction = read_range(n["blood_volume_fraction"], name + ".blood_volume_fraction");
      if (n["water_fraction"]) o.water_fraction = n["water_fraction"].as<double>();
      if (n["fat_fraction"]) o.fat_fraction = n["fat_fraction"].as<double>();
      if (n["melanin_fraction"]) o.melanin_fraction = n["melanin_fraction"].as<double>();
      if (n["scattering_a_per_mm"]) o.scattering_a_per_mm = n["scattering_a_per_mm"].as<double>();
      if (n["scattering_b"]) o.scattering_b = n["scattering_b"].as<double>();
      if (n["anisotropy"]) o.anisotropy = n["anisotropy"].as<double>();
      if (n["refractive_index"]) o.refractive_index = n["refractive_index"].as<double>();
    } catch (const YAML::Exception& e) {
      fail(ErrorCode::kInvalidConfig, name + ": " + e.what());
    }
    spec.classes[id(*cls)] = o;
  }
  spec.validate();
  return spec;
}

void TissueOpticalSpec::save(const fs::path& yaml_path) const {
  YAML::Node root;
  for (int cid = 1; cid <= kNumClasses; ++cid) {
    const auto& entry = classes[static_cast<std::size_t>(cid)];
    if (!entry) continue;
    YAML::Node n;
    n["so2"] = write_range(entry->so2);
    n["blood_volume_fraction"] = write_range(entry->blood_volume_fraction);
    n["water_fraction"] = entry->water_fraction;
    n["fat_fraction"] = entry->fat_fraction;
    n["melanin_fraction"] = entry->melanin_fraction;
    n["scattering_a_per_mm"] = entry->scattering_a_per_mm;
    n["scattering_b"] = entry->scattering_b;
    n["anisotropy"] = entry->anisotropy;
    n["refractive_index"] = entry->refractive_index;
    root["classes"][std::string(class_name(static_cast<TissueClass>(cid)))] = n;
  }
  std::ofstream out(yaml_path);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot write " + yaml_path.string());
  out << root << '\n';
}

TissueOpticalSpec default_tissue_spec() {
  TissueOpticalSpec spec;
  ClassOptics vessel;
  vessel.blood_volume_fraction = {1.0, 1.0};
  vessel.scattering_a_per_mm = 2.2;
  vessel.scattering_b = 1.2;
  vessel.anisotropy = 0.9;
  vessel.refractive_index = 1.36;

  ClassOptics artery = vessel;
  artery.so2 = {0.9, 1.0};
  ClassOptics vein = vessel;
  vein.so2 = {0.6, 0.8};

  ClassOptics muscle;
  muscle.so2 = {0.6, 0.8};
  muscle.blood_volume_fraction = {0.005, 0.05};
  muscle.water_fraction = 0.7;
  muscle.scattering_a_per_mm = 1.9;
  muscle.scattering_b = 1.3;
  muscle.anisotropy = 0.9;
  muscle.refractive_index = 1.36;

  ClassOptics skin;
  skin.so2 = {0.6, 0.8};
  skin.blood_volume_fraction = {0.01, 0.03};
  skin.water_fraction = 0.6;
  skin.scattering_a_per_mm = 4.6;
  skin.scattering_b = 1.42;
  skin.anisotropy = 0.9;
  skin.refractive_index = 1.38;

  ClassOptics coupling;  // gel, membrane and heavy water: water absorption, weak scattering
  coupling.water_fraction = 1.0;
  coupling.scattering_a_per_mm = 0.1;
  coupling.scattering_b = 0.0;
  coupling.anisotropy = 0.9;
  coupling.refractive_index = 1.33;

  spec.classes[id(TissueClass::kArtery)] = artery;
  spec.classes[id(TissueClass::kSkin)] = skin;
  spec.classes[id(TissueClass::kMuscle)] = muscle;
  spec.classes[id(TissueClass::kGel)] = coupling;
  spec.classes[id(TissueClass::kMembrane)] = coupling;
  spec.classes[id(TissueClass::kHeavyWater)] = coupling;
  spec.classes[id(TissueClass::kVein)] = vein;
  return spec;
}

const ClassSample& TissueInstance::at(TissueClass c) const {
  const auto& entry = classes[id(c)];
  require(entry.has_value(), ErrorCode::kMissingClass,
          "tissue instance has no sample for class " + std::string(class_name(c)));
  return *entry;
}

TissueInstance sample_tissue_instance(const TissueOpticalSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  TissueInstance instance;
  instance.seed = seed;
  for (int cid = 1; cid <= kNumClasses; ++cid) {
    const auto& entry = spec.classes[static_cast<std::size_t>(cid)];
    if (!entry) continue;
    ClassSample s;
    s.so2 = entry->so2.sample(rng);
    s.blood_volume_fraction = entry->blood_volume_fraction.sample(rng);
    instance.classes[static_cast<std::size_t>(cid)] = s;
  }
  return instance;
}

double mixed_mua(double so2, double blood_volume_fraction, const ClassOptics& optics, double wavelength_nm,
                 const ChromophoreSpectra& spectra) {
  double mua = blood_volume_fraction *
               (so2 * spectra.oxyhemoglobin(wavelength_nm) + (1.0 - so2) * spectra.deoxyhemoglobin(wavelength_nm));
  mua += optics.water_fraction * spectra.water(wavelength_nm);
  mua += optics.fat_fraction * spectra.fat(wavelength_nm);
  mua += optics.melanin_fraction * melanin_mua(wavelength_nm);
  return mua;
}

double mixed_mua(const TissueInstance& instance, const TissueOpticalSpec& spec, TissueClass c, double wavelength_nm,
                 const ChromophoreSpectra& spectra) {
  const ClassSample& s = instance.at(c);
  return mixed_mua(s.so2, s.blood_volume_fraction, spec.at(c), wavelength_nm, spectra);
}

OpticalVolume::OpticalVolume(Shape3 shape, double spacing, double wavelength)
    : mua(shape), mus(shape), g(shape), n(shape, 1.0f), spacing_mm(spacing), wavelength_nm(wavelength) {}

void OpticalVolume::validate() const {
  const Shape3 s = mua.shape;
  require(s.size() > 0 && mus.shape == s && g.shape == s && n.shape == s, ErrorCode::kInvalidVolume,
          "optical volume: inconsistent or empty grids");
  require(spacing_mm > 0.0, ErrorCode::kInvalidVolume, "optical volume: spacing must be positive");
  require((mua.data > 0.0f).all() && mua.data.allFinite(), ErrorCode::kInvalidVolume, "optical volume: mua must be > 0");
  require((mus.data >= 0.0f).all() && mus.data.allFinite(), ErrorCode::kInvalidVolume,
          "optical volume: mus must be >= 0");
  require((g.data >= -1.0f).all() && (g.data < 1.0f).all(), ErrorCode::kInvalidVolume,
          "optical volume: g outside [-1, 1)");
  require((n.data >= 1.0f).all(), ErrorCode::kInvalidVolume, "optical volume: n below 1");
}

OpticalVolume assign_optics(const LabelMap3& labelmap, const TissueInstance& instance, const TissueOpticalSpec& spec,
                            const ChromophoreSpectra& spectra, double wavelength_nm) {
  struct Values {
    float mua, mus, g, n;
  };
  std::array<std::optional<Values>, kNumClasses + 1> table;
  const auto hist = class_histogram(labelmap);
  for (int cid = 1; cid <= kNumClasses; ++cid) {
    if (hist[static_cast<std::size_t>(cid)] == 0) continue;
    const auto cls = static_cast<TissueClass>(cid);
    const ClassOptics& o = spec.at(cls);
    const double mua = mixed_mua(instance, spec, cls, wavelength_nm, spectra);
    const double mus = o.reduced_scattering(wavelength_nm) / (1.0 - o.anisotropy);
    table[static_cast<std::size_t>(cid)] =
        Values{static_cast<float>(mua), static_cast<float>(mus), static_cast<float>(o.anisotropy),
               static_cast<float>(o.refractive_index)};
  }
  std::size_t total = 0;
  for (int cid = 1; cid <= kNumClasses; ++cid) total += hist[static_cast<std::size_t>(cid)];
  require(total == static_cast<std::size_t>(labelmap.grid.data.size()), ErrorCode::kInvalidId, "assign_optics: label map has invalid class ids");

  OpticalVolume vol(labelmap.shape(), labelmap.spacing_mm, wavelength_nm);
  for (Eigen::Index i = 0; i < labelmap.grid.data.size(); ++i) {
    const Values& v = *table[labelmap.grid.data[i]];
    vol.mua.data[i] = v.mua;
    vol.mus.data[i] = v.mus;
    vol.g.data[i] = v.g;
    vol.n.data[i] = v.n;
  }
  return vol;
}

}  // namespace pasyn
