#include "doctest.h"

#include <filesystem>
#include <set>

#include "pasyn/tissue_optics.hpp"

using namespace pasyn;
namespace fs = std::filesystem;

namespace {

// Bisection on hbo2 - hb over [lo, hi].
double hemoglobin_crossing(const ChromophoreSpectra& s, double lo, double hi) {
  auto diff = [&](double nm) { return s.oxyhemoglobin(nm) - s.deoxyhemoglobin(nm); };
  REQUIRE(diff(lo) * diff(hi) < 0.0);
  for (int i = 0; i < 60; ++i) {
    const double mid = 0.5 * (lo + hi);
    (diff(lo) * diff(mid) <= 0.0 ? hi : lo) = mid;
  }
  return 0.5 * (lo + hi);
}

LabelMap3 two_class_volume() {
  LabelMap3 m(Shape3{6, 3, 8}, 0.5, TissueClass::kMuscle);
  for (int y = 0; y < 3; ++y)
    for (int x = 2; x < 4; ++x) m(x, y, 5) = id(TissueClass::kVein);
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 6; ++x) m(x, y, 0) = id(TissueClass::kGel);
  return m;
}

}  // namespace

TEST_CASE("spectrum table interpolates linearly and rejects out-of-grid") {
  const SpectrumTable t({700.0, 710.0, 720.0}, {1.0, 2.0, 4.0});
  CHECK(t(700.0) == 1.0);
  CHECK(t(705.0) == doctest::Approx(1.5));
  CHECK(t(717.5) == doctest::Approx(3.5));
  CHECK(t(720.0) == 4.0);
  try {
    t(699.0);
    FAIL("expected out-of-grid");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kOutOfGrid);
  }
  CHECK_THROWS_AS(SpectrumTable({700.0, 700.0}, {1.0, 1.0}), Error);
}

TEST_CASE("shipped spectra are positive and cover 700-850 nm") {
  const auto& s = shipped_spectra();
  CHECK_NOTHROW(s.validate());
  for (double nm = 700.0; nm <= 850.0; nm += 2.5) {
    CHECK(s.oxyhemoglobin(nm) > 0.0);
    CHECK(s.deoxyhemoglobin(nm) > 0.0);
    CHECK(s.water(nm) > 0.0);
    CHECK(s.fat(nm) > 0.0);
  }
  // Deoxygenated blood absorbs more at the red end, oxygenated at the near-IR end.
  CHECK(s.deoxyhemoglobin(750.0) > s.oxyhemoglobin(750.0));
  CHECK(s.oxyhemoglobin(850.0) > s.deoxyhemoglobin(850.0));
}

TEST_CASE("hemoglobin isosbestic point of the shipped tables") {
  const auto& s = shipped_spectra();
  const double iso = hemoglobin_crossing(s, 780.0, 820.0);
  CHECK(iso == doctest::Approx(800.0).epsilon(0.01));
  const ClassOptics blood;
  const double oxy = mixed_mua(1.0, 1.0, blood, iso, s);
  const double deoxy = mixed_mua(0.0, 1.0, blood, iso, s);
  CHECK(std::abs(oxy - deoxy) / deoxy < 0.05);
}

TEST_CASE("mixed_mua degenerate mixtures") {
  const auto& s = shipped_spectra();
  ClassOptics pure;
  CHECK(mixed_mua(1.0, 1.0, pure, 760.0, s) == s.oxyhemoglobin(760.0));
  CHECK(mixed_mua(0.0, 1.0, pure, 760.0, s) == s.deoxyhemoglobin(760.0));
  ClassOptics water;
  water.water_fraction = 1.0;
  CHECK(mixed_mua(0.7, 0.0, water, 760.0, s) == doctest::Approx(s.water(760.0)));
  CHECK_THROWS_AS(mixed_mua(0.7, 0.5, water, 1200.0, s), Error);
}

TEST_CASE("mixed_mua is linear in blood volume fraction") {
  const auto& s = shipped_spectra();
  ClassOptics muscle = default_tissue_spec().at(TissueClass::kMuscle);
  for (double nm : {700.0, 745.0, 800.0, 850.0}) {
    const double base = mixed_mua(0.7, 0.0, muscle, nm, s);
    const double one = mixed_mua(0.7, 0.02, muscle, nm, s);
    const double two = mixed_mua(0.7, 0.04, muscle, nm, s);
    CHECK(two - base == doctest::Approx(2.0 * (one - base)).epsilon(1e-12));
  }
}

TEST_CASE("tissue instance sampling") {
  const TissueOpticalSpec spec = default_tissue_spec();
  CHECK_NOTHROW(spec.validate());
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const TissueInstance inst = sample_tissue_instance(spec, seed);
    const double a = inst.at(TissueClass::kArtery).so2;
    CHECK(a >= 0.9);
    CHECK(a <= 1.0);
    const double v = inst.at(TissueClass::kVein).so2;
    CHECK(v >= 0.6);
    CHECK(v <= 0.8);
    const double vb = inst.at(TissueClass::kMuscle).blood_volume_fraction;
    CHECK(vb >= 0.005);
    CHECK(vb <= 0.05);
  }
  const TissueInstance a = sample_tissue_instance(spec, 5);
  const TissueInstance b = sample_tissue_instance(spec, 5);
  for (int c = 1; c <= kNumClasses; ++c) {
    const auto k = static_cast<TissueClass>(c);
    CHECK(a.at(k).so2 == b.at(k).so2);
    CHECK(a.at(k).blood_volume_fraction == b.at(k).blood_volume_fraction);
  }

  TissueOpticalSpec forced = spec;
  forced.classes[id(TissueClass::kVein)]->so2 = {0.7, 0.7};
  CHECK(sample_tissue_instance(forced, 17).at(TissueClass::kVein).so2 == 0.7);
}

TEST_CASE("spec validation rejects bad fractions") {
  TissueOpticalSpec spec = default_tissue_spec();
  spec.classes[id(TissueClass::kMuscle)]->water_fraction = 0.99;
  CHECK_THROWS_AS(spec.validate(), Error);
  spec = default_tissue_spec();
  spec.classes[id(TissueClass::kSkin)]->anisotropy = 1.0;
  CHECK_THROWS_AS(spec.validate(), Error);
  spec = default_tissue_spec();
  spec.classes[id(TissueClass::kSkin)]->scattering_a_per_mm = 0.0;
  CHECK_THROWS_AS(spec.validate(), Error);
}

TEST_CASE("scattering conversion mus = mus' / (1 - g)") {
  ClassOptics c;
  c.scattering_a_per_mm = 1.0;
  c.scattering_b = 0.0;
  c.anisotropy = 0.9;
  TissueOpticalSpec spec = default_tissue_spec();
  spec.classes[id(TissueClass::kMuscle)] = c;
  const LabelMap3 m(Shape3{2, 2, 2}, 0.5, TissueClass::kMuscle);
  const OpticalVolume v = assign_optics(m, sample_tissue_instance(spec, 1), spec, shipped_spectra(), 800.0);
  CHECK(v.mus(0, 0, 0) == doctest::Approx(10.0));
  CHECK(c.reduced_scattering(500.0) == 1.0);
}

TEST_CASE("homogeneous map gives a constant optical volume") {
  const TissueOpticalSpec spec = default_tissue_spec();
  const LabelMap3 m(Shape3{5, 4, 3}, 0.5, TissueClass::kMuscle);
  const OpticalVolume v = assign_optics(m, sample_tissue_instance(spec, 3), spec, shipped_spectra(), 760.0);
  CHECK((v.mua.data == v.mua.data[0]).all());
  CHECK((v.mus.data == v.mus.data[0]).all());
  CHECK((v.g.data == v.g.data[0]).all());
  CHECK((v.n.data == v.n.data[0]).all());
  CHECK_NOTHROW(v.validate());
}

TEST_CASE("different instances change vessel absorption but not partitioning") {
  const TissueOpticalSpec spec = default_tissue_spec();
  const LabelMap3 m = two_class_volume();
  const auto& s = shipped_spectra();
  const OpticalVolume a = assign_optics(m, sample_tissue_instance(spec, 1), spec, s, 750.0);
  const OpticalVolume b = assign_optics(m, sample_tissue_instance(spec, 2), spec, s, 750.0);
  CHECK(a.mua(2, 0, 5) != b.mua(2, 0, 5));
  // Voxels share a value in one volume exactly when they share it in the other.
  for (Eigen::Index i = 0; i < m.grid.data.size(); ++i)
    for (Eigen::Index j = 0; j < m.grid.data.size(); j += 7) {
      const bool same_class = m.grid.data[i] == m.grid.data[j];
      CHECK((a.mua.data[i] == a.mua.data[j]) == same_class);
      CHECK((b.mua.data[i] == b.mua.data[j]) == same_class);
    }
}

TEST_CASE("optical volumes satisfy invariants over random instances") {
  const TissueOpticalSpec spec = default_tissue_spec();
  LabelMap3 m(Shape3{7, 1, 4}, 0.5);
  for (int x = 0; x < 7; ++x) m(x, 0, 0) = x + 1;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    for (double nm : {700.0, 780.0, 850.0}) {
      const OpticalVolume v = assign_optics(m, sample_tissue_instance(spec, seed), spec, shipped_spectra(), nm);
      CHECK_NOTHROW(v.validate());
      std::set<float> values(v.mua.data.data(), v.mua.data.data() + v.mua.data.size());
      CHECK(values.size() <= kNumClasses);
    }
  }
}

TEST_CASE("class missing from spec is an error") {
  TissueOpticalSpec spec = default_tissue_spec();
  spec.classes[id(TissueClass::kVein)].reset();
  const LabelMap3 m = two_class_volume();
  try {
    assign_optics(m, sample_tissue_instance(spec, 1), spec, shipped_spectra(), 800.0);
    FAIL("expected missing-class");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kMissingClass);
  }
}

TEST_CASE("optical spec yaml round trip and shipped default file") {
  const fs::path p = fs::temp_directory_path() / "pasyn_test_optics.yaml";
  const TissueOpticalSpec spec = default_tissue_spec();
  spec.save(p);
  const TissueOpticalSpec back = TissueOpticalSpec::load(p);
  for (int c = 1; c <= kNumClasses; ++c) {
    const auto k = static_cast<TissueClass>(c);
    CHECK(back.at(k).so2.lo == spec.at(k).so2.lo);
    CHECK(back.at(k).so2.hi == spec.at(k).so2.hi);
    CHECK(back.at(k).water_fraction == spec.at(k).water_fraction);
    CHECK(back.at(k).scattering_b == spec.at(k).scattering_b);
  }
  fs::remove(p);

  const TissueOpticalSpec shipped = TissueOpticalSpec::load(default_data_dir() / "tissue_optics.yaml");
  for (int c = 1; c <= kNumClasses; ++c) {
    const auto k = static_cast<TissueClass>(c);
    CHECK(shipped.at(k).so2.lo == spec.at(k).so2.lo);
    CHECK(shipped.at(k).blood_volume_fraction.hi == spec.at(k).blood_volume_fraction.hi);
    CHECK(shipped.at(k).scattering_a_per_mm == spec.at(k).scattering_a_per_mm);
  }
}
