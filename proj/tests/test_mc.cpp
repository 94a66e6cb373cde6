#include "doctest.h"

#include <cmath>
#include <cstring>
#include <filesystem>

#include "pasyn/photon_mc.hpp"
#include "pasyn/volume_io.hpp"

using namespace pasyn;
namespace fs = std::filesystem;

namespace {

OpticalVolume homogeneous(Shape3 shape, double h, float mua, float mus, float g) {
  OpticalVolume v(shape, h, 800.0);
  v.mua.data.setConstant(mua);
  v.mus.data.setConstant(mus);
  v.g.data.setConstant(g);
  v.n.data.setConstant(1.33f);
  return v;
}

OpticalVolume random_volume(std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_int_distribution<int> dim(4, 12);
  const Shape3 shape{dim(rng), dim(rng), dim(rng)};
  OpticalVolume v(shape, uniform(rng, 0.2, 1.0), 800.0);
  for (Eigen::Index i = 0; i < v.mua.data.size(); ++i) {
    v.mua.data[i] = static_cast<float>(uniform(rng, 0.01, 1.0));
    v.mus.data[i] = static_cast<float>(uniform(rng, 0.0, 20.0));
    v.g.data[i] = static_cast<float>(uniform(rng, -0.5, 0.95));
    v.n.data[i] = 1.33f;
  }
  return v;
}

// Transverse sum of fluence times voxel area at each depth index.
std::vector<double> depth_profile(const FluenceVolume& f) {
  const Shape3 s = f.shape();
  std::vector<double> out(static_cast<std::size_t>(s.z), 0.0);
  for (int z = 0; z < s.z; ++z)
    for (int y = 0; y < s.y; ++y)
      for (int x = 0; x < s.x; ++x) out[static_cast<std::size_t>(z)] += f.fluence(x, y, z);
  for (double& v : out) v *= f.spacing_mm * f.spacing_mm;
  return out;
}

bool same_bytes(const FluenceVolume& a, const FluenceVolume& b) {
  return a.fluence.data.size() == b.fluence.data.size() &&
         std::memcmp(a.fluence.data.data(), b.fluence.data.data(), sizeof(float) * a.fluence.data.size()) == 0 &&
         a.escaped_weight == b.escaped_weight && a.deposited_weight == b.deposited_weight;
}

}  // namespace

TEST_CASE("henyey-greenstein sampling moments") {
  CounterRng rng(123);
  constexpr int n = 1000000;
  double sum0 = 0.0;
  int outside = 0;
  for (int i = 0; i < n; ++i) {
    const double c = sample_hg(0.0, rng);
    outside += c < -1.0 || c > 1.0;
    sum0 += c;
  }
  CHECK(outside == 0);
  CHECK(std::abs(sum0 / n) < 0.005);

  const double g = 0.9;
  double sum = 0.0;
  for (int i = 0; i < n; ++i) sum += sample_hg(g, rng);
  // Var[cos] = (1 + 2 g^2) / 3 - g^2 for the HG density.
  const double se = std::sqrt(((1.0 + 2.0 * g * g) / 3.0 - g * g) / n);
  CHECK(std::abs(sum / n - g) < 3.0 * se);

  int above = 0;
  for (int i = 0; i < 10000; ++i) above += sample_hg(0.999, rng) > 0.9;
  CHECK(above >= 9900);
}

TEST_CASE("pure absorber pencil beam follows Beer-Lambert") {
  const double h = 0.5;
  const double mua = 0.1;
  const OpticalVolume v = homogeneous({11, 11, 50}, h, static_cast<float>(mua), 0.0f, 0.9f);
  const FluenceVolume f = simulate_fluence(v, SourceSpec::pencil_beam(1000000, 5), 1);
  const auto profile = depth_profile(f);
  for (int z = 0; z * h < 20.0; ++z) {
    // Voxel average of exp(-mua z) over [z h, (z + 1) h].
    const double expected = std::exp(-mua * z * h) * (1.0 - std::exp(-mua * h)) / (mua * h);
    CHECK(profile[static_cast<std::size_t>(z)] == doctest::Approx(expected).epsilon(0.02));
  }
  CHECK(f.deposited_weight + f.escaped_weight == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(f.escaped_weight == doctest::Approx(std::exp(-mua * 25.0)).epsilon(0.02));
}

TEST_CASE("pure absorber initial pressure peaks at the surface") {
  const double mua = 0.2;
  const OpticalVolume v = homogeneous({5, 5, 40}, 0.5, static_cast<float>(mua), 0.0f, 0.0f);
  const FluenceVolume f = simulate_fluence(v, SourceSpec::pencil_beam(200000, 2), 1);
  const InitialPressureVolume p = initial_pressure(f, v);
  double prev = std::numeric_limits<double>::infinity();
  for (int z = 0; z < 40; ++z) {
    const double p0 = p.pressure(2, 2, z);
    const double expected = mua * std::exp(-mua * z * 0.5) * (1.0 - std::exp(-mua * 0.5)) / (mua * 0.5) / 0.25;
    CHECK(p0 == doctest::Approx(expected).epsilon(0.01));
    CHECK(p0 < prev);
    prev = p0;
  }
}

TEST_CASE("weight bookkeeping identity on random heterogeneous volumes") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const OpticalVolume v = random_volume(seed);
    SourceSpec src;
    src.photon_count = 2000;
    src.base_seed = seed;
    src.aperture_x_mm = 2.0;
    src.aperture_y_mm = 1.0;
    const FluenceVolume f = simulate_fluence(v, src, 2);
    CHECK(std::abs(f.deposited_weight + f.escaped_weight - 1.0) < 1e-6);
    CHECK((f.fluence.data >= 0.0f).all());
  }
}

TEST_CASE("fluence is bit-identical for any worker count") {
  const OpticalVolume v = random_volume(99);
  SourceSpec src;
  src.photon_count = 5000;
  src.base_seed = 42;
  const FluenceVolume one = simulate_fluence(v, src, 1);
  for (int workers : {2, 4, 8}) CHECK(same_bytes(one, simulate_fluence(v, src, workers)));
  src.base_seed = 43;
  CHECK_FALSE(same_bytes(one, simulate_fluence(v, src, 1)));
}

TEST_CASE("centered pencil beam gives left/right symmetric fluence") {
  const int X = 21;
  const OpticalVolume v = homogeneous({X, X, 20}, 1.0, 0.1f, 1.0f, 0.0f);
  const FluenceVolume f = simulate_fluence(v, SourceSpec::pencil_beam(1000000, 8), 1);
  double left = 0.0, right = 0.0;
  for (int z = 0; z < 20; ++z)
    for (int y = 0; y < X; ++y)
      for (int x = 0; x < X / 2; ++x) {
        left += f.fluence(x, y, z);
        right += f.fluence(X - 1 - x, y, z);
      }
  CHECK(std::abs(left - right) / (0.5 * (left + right)) < 0.01);
}

TEST_CASE("depth profile decreases in a homogeneous scattering medium") {
  const OpticalVolume v = homogeneous({15, 15, 30}, 1.0, 0.1f, 1.0f, 0.9f);
  constexpr int runs = 8;
  std::vector<std::vector<double>> profiles;
  for (int r = 0; r < runs; ++r)
    profiles.push_back(depth_profile(simulate_fluence(v, SourceSpec::pencil_beam(20000, 100 + r), 1)));
  for (std::size_t z = 0; z + 1 < profiles[0].size(); ++z) {
    double mean = 0.0, sq = 0.0;
    for (const auto& p : profiles) {
      const double d = p[z + 1] - p[z];
      mean += d;
      sq += d * d;
    }
    mean /= runs;
    const double se = std::sqrt(std::max(0.0, sq / runs - mean * mean) / (runs - 1));
    CHECK(mean <= 3.0 * se);
  }
}

TEST_CASE("zero attenuation voxels are traversed ballistically") {
  const OpticalVolume v = homogeneous({3, 3, 10}, 1.0, 0.0f, 0.0f, 0.0f);
  const FluenceVolume f = simulate_fluence(v, SourceSpec::pencil_beam(100, 1), 1);
  CHECK(f.escaped_weight == doctest::Approx(1.0));
  CHECK(f.deposited_weight == 0.0);
  CHECK(f.fluence(1, 1, 5) == doctest::Approx(1.0f));
}

TEST_CASE("initial pressure is linear in absorption") {
  OpticalVolume v = homogeneous({4, 4, 6}, 0.5, 0.2f, 2.0f, 0.8f);
  const FluenceVolume f = simulate_fluence(v, SourceSpec::pencil_beam(1000, 3), 1);
  const InitialPressureVolume p1 = initial_pressure(f, v);
  v.mua.data *= 2.0f;
  const InitialPressureVolume p2 = initial_pressure(f, v);
  CHECK(((p2.pressure.data - 2.0f * p1.pressure.data).abs() <= 1e-6f * p2.pressure.data.abs()).all());

  FluenceVolume zero = f;
  zero.fluence.data.setZero();
  CHECK((initial_pressure(zero, v).pressure.data == 0.0f).all());

  OpticalVolume other = homogeneous({4, 4, 7}, 0.5, 0.2f, 2.0f, 0.8f);
  CHECK_THROWS_AS(initial_pressure(f, other), Error);
  OpticalVolume shifted = v;
  shifted.wavelength_nm = 810.0;
  CHECK_THROWS_AS(initial_pressure(f, shifted), Error);
}

TEST_CASE("source and volume validation") {
  const OpticalVolume v = homogeneous({4, 4, 4}, 0.5, 0.1f, 1.0f, 0.9f);
  SourceSpec s = SourceSpec::pencil_beam(10, 1);
  s.photon_count = 0;
  CHECK_THROWS_AS(simulate_fluence(v, s, 1), Error);
  s = SourceSpec::pencil_beam(10, 1);
  s.divergence_deg = 90.0;
  CHECK_THROWS_AS(simulate_fluence(v, s, 1), Error);
  s = SourceSpec::pencil_beam(10, 1);
  CHECK_THROWS_AS(simulate_fluence(v, s, 0), Error);
  OpticalVolume bad = v;
  bad.g.data[3] = 1.0f;
  try {
    simulate_fluence(bad, s, 1);
    FAIL("expected invalid-volume");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kInvalidVolume);
  }
}

TEST_CASE("volume files round trip") {
  const fs::path dir = fs::temp_directory_path() / "pasyn_test_vol";
  fs::create_directories(dir);
  const OpticalVolume v = random_volume(4);
  write_optical(dir / "optics.vol", v, 17);
  const OpticalVolume back = read_optical(dir / "optics.vol");
  CHECK(back.shape() == v.shape());
  CHECK((back.mua.data == v.mua.data).all());
  CHECK((back.g.data == v.g.data).all());
  CHECK(back.spacing_mm == v.spacing_mm);

  SourceSpec src;
  src.photon_count = 500;
  const FluenceVolume f = simulate_fluence(v, src, 1);
  write_fluence(dir / "fluence.vol", f);
  CHECK(same_bytes(read_fluence(dir / "fluence.vol"), f));
  const auto header = read_json(header_path(dir / "fluence.vol"));
  CHECK(header["shape"] == nlohmann::json::array({v.shape().x, v.shape().y, v.shape().z}));
  CHECK(header["kind"] == "fluence");
  fs::remove_all(dir);
}
