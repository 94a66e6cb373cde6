#include "pasyn/photon_mc.hpp"

#include <algorithm>
#include <limits>
#include <numbers>
#include <thread>
#include <vector>

#include "pasyn/error.hpp"

namespace pasyn {

namespace {

// Fixed-point scale for accumulators: sums of quantized terms are exact and
// therefore independent of summation order.
constexpr double kFixedScale = 4294967296.0;  // 2^32

std::int64_t to_fixed(double v) { return static_cast<std::int64_t>(v * kFixedScale + 0.5); }

struct Direction {
  double x, y, z;
};

Direction rotate(const Direction& d, double cos_theta, double phi) {
  const double sin_theta = std::sqrt(std::max(0.0, 1.0 - cos_theta * cos_theta));
  const double cos_phi = std::cos(phi);
  const double sin_phi = std::sin(phi);
  Direction out;
  if (std::abs(d.z) > 0.99999) {
    out = {sin_theta * cos_phi, sin_theta * sin_phi, std::copysign(cos_theta, d.z)};
  } else {
    const double t = std::sqrt(1.0 - d.z * d.z);
    out = {sin_theta * (d.x * d.z * cos_phi - d.y * sin_phi) / t + d.x * cos_theta,
           sin_theta * (d.y * d.z * cos_phi + d.x * sin_phi) / t + d.y * cos_theta,
           -sin_theta * cos_phi * t + d.z * cos_theta};
  }
  const double norm = std::sqrt(out.x * out.x + out.y * out.y + out.z * out.z);
  return {out.x / norm, out.y / norm, out.z / norm};
}

struct Medium {
  Shape3 shape;
  double h;
  std::vector<float> mut;
  std::vector<float> mua;
  std::vector<float> g;
};

struct Tally {
  std::vector<std::int64_t> track;  // sum of weight * path length per voxel
  std::int64_t deposited = 0;
  std::int64_t escaped = 0;
};

struct Launch {
  double x0, x1, y0, y1;  // aperture clipped to the top face
  Direction dir;
  double cos_max;
};

void trace_photon(const Medium& m, const Launch& launch, const TransportOptions& opt, std::uint64_t seed,
                  Tally& tally) {
  CounterRng rng(seed);
  const double h = m.h;
  const Shape3 s = m.shape;

  double px = launch.x0 + (launch.x1 - launch.x0) * rng.uniform();
  double py = launch.y0 + (launch.y1 - launch.y0) * rng.uniform();
  double pz = 0.0;
  Direction d = launch.dir;
  {
    const double cos_theta = 1.0 - rng.uniform() * (1.0 - launch.cos_max);
    const double phi = 2.0 * std::numbers::pi * rng.uniform();
    if (launch.cos_max < 1.0) d = rotate(d, cos_theta, phi);
  }
  int ix = std::clamp(static_cast<int>(std::floor(px / h)), 0, s.x - 1);
  int iy = std::clamp(static_cast<int>(std::floor(py / h)), 0, s.y - 1);
  int iz = 0;

  double w = 1.0;
  double deposited = 0.0;
  double escaped = 0.0;
  double tau = -std::log(rng.uniform_open0());
  const auto index = [&]() { return (static_cast<std::size_t>(iz) * s.y + iy) * s.x + ix; };

  for (;;) {
    const std::size_t v = index();
    const double mut = m.mut[v];
    // Distance to the next voxel face along each axis.
    const double bx = d.x > 0 ? ((ix + 1) * h - px) / d.x : (d.x < 0 ? (ix * h - px) / d.x : 1e300);
    const double by = d.y > 0 ? ((iy + 1) * h - py) / d.y : (d.y < 0 ? (iy * h - py) / d.y : 1e300);
    const double bz = d.z > 0 ? ((iz + 1) * h - pz) / d.z : (d.z < 0 ? (iz * h - pz) / d.z : 1e300);
    double boundary = std::max(0.0, std::min({bx, by, bz}));

    if (mut > 0.0 && tau <= mut * boundary) {
      const double step = tau / mut;
      px += step * d.x;
      py += step * d.y;
      pz += step * d.z;
      tally.track[v] += to_fixed(w * step);

      const double w_after = w * (1.0 - m.mua[v] / mut);
      deposited += w - w_after;
      w = w_after;
      if (w < opt.roulette_threshold) {
        if (w <= 0.0 || rng.uniform() >= opt.roulette_survival) {
          deposited += w;
          w = 0.0;
          break;
        }
      }
      d = rotate(d, sample_hg(m.g[v], rng), 2.0 * std::numbers::pi * rng.uniform());
      tau = -std::log(rng.uniform_open0());
      continue;
    }

    px += boundary * d.x;
    py += boundary * d.y;
    pz += boundary * d.z;
    tally.track[v] += to_fixed(w * boundary);
    tau -= mut * boundary;
    if (bx <= by && bx <= bz) {
      ix += d.x > 0 ? 1 : -1;
      px = (d.x > 0 ? ix : ix + 1) * h;
    } else if (by <= bz) {
      iy += d.y > 0 ? 1 : -1;
      py = (d.y > 0 ? iy : iy + 1) * h;
    } else {
      iz += d.z > 0 ? 1 : -1;
      pz = (d.z > 0 ? iz : iz + 1) * h;
    }
    if (ix < 0 || iy < 0 || iz < 0 || ix >= s.x || iy >= s.y || iz >= s.z) {
      escaped += w;
      w = 0.0;
      break;
    }
  }
  tally.deposited += to_fixed(deposited);
  tally.escaped += to_fixed(escaped);
}

}  // namespace

void SourceSpec::validate() const {
  require(photon_count >= 1, ErrorCode::kInvalidParams, "source: photon_count must be >= 1");
  require(std::abs(direction.norm() - 1.0) < 1e-9, ErrorCode::kInvalidParams, "source: direction must be normalized");
  require(direction.z() > 0.0, ErrorCode::kInvalidParams, "source: direction must point into the volume (+z)");
  require(divergence_deg >= 0.0 && divergence_deg < 90.0, ErrorCode::kInvalidParams,
          "source: divergence must lie in [0, 90) degrees");
  require(aperture_x_mm >= 0.0 && aperture_y_mm >= 0.0, ErrorCode::kInvalidParams,
          "source: aperture extents must be >= 0");
}

SourceSpec SourceSpec::pencil_beam(std::uint64_t photons, std::uint64_t seed) {
  SourceSpec s;
  s.aperture_x_mm = 0.0;
  s.aperture_y_mm = 0.0;
  s.divergence_deg = 0.0;
  s.photon_count = photons;
  s.base_seed = seed;
  return s;
}

FluenceVolume simulate_fluence(const OpticalVolume& volume, const SourceSpec& source, int workers,
                               const TransportOptions& options) {
  source.validate();
  require(workers >= 1, ErrorCode::kInvalidParams, "simulate_fluence: workers must be >= 1");
  require(options.roulette_threshold >= 0.0 && options.roulette_survival > 0.0 && options.roulette_survival <= 1.0,
          ErrorCode::kInvalidParams, "simulate_fluence: invalid roulette settings");
  const Shape3 s = volume.shape();
  require(s.size() > 0 && volume.mus.shape == s && volume.g.shape == s && volume.spacing_mm > 0.0,
          ErrorCode::kInvalidVolume, "simulate_fluence: inconsistent volume");
  // Zero attenuation is allowed and traversed ballistically.
  require((volume.mua.data >= 0.0f).all() && (volume.mus.data >= 0.0f).all() && volume.mua.data.allFinite() &&
              volume.mus.data.allFinite() && (volume.g.data >= -1.0f).all() && (volume.g.data < 1.0f).all(),
          ErrorCode::kInvalidVolume, "simulate_fluence: optical parameters violate invariants");

  Medium medium{s, volume.spacing_mm, {}, {}, {}};
  medium.mut.resize(s.size());
  medium.mua.assign(volume.mua.data.data(), volume.mua.data.data() + s.size());
  medium.g.assign(volume.g.data.data(), volume.g.data.data() + s.size());
  for (std::size_t i = 0; i < s.size(); ++i) medium.mut[i] = volume.mua.data[static_cast<Eigen::Index>(i)] +
                                                            volume.mus.data[static_cast<Eigen::Index>(i)];

  const double h = volume.spacing_mm;
  const double width = s.x * h;
  const double depth = s.y * h;
  const double cx = source.center_x_mm.value_or(0.5 * width);
  const double cy = source.center_y_mm.value_or(0.5 * depth);
  Launch launch;
  launch.x0 = std::clamp(cx - 0.5 * source.aperture_x_mm, 0.0, width);
  launch.x1 = std::clamp(cx + 0.5 * source.aperture_x_mm, 0.0, width);
  launch.y0 = std::clamp(cy - 0.5 * source.aperture_y_mm, 0.0, depth);
  launch.y1 = std::clamp(cy + 0.5 * source.aperture_y_mm, 0.0, depth);
  require(cx >= 0.0 && cx <= width && cy >= 0.0 && cy <= depth, ErrorCode::kInvalidParams,
          "simulate_fluence: source center outside the top face");
  launch.dir = {source.direction.x(), source.direction.y(), source.direction.z()};
  launch.cos_max = std::cos(source.divergence_deg * std::numbers::pi / 180.0);

  const std::uint64_t n = source.photon_count;
  const auto worker_count = static_cast<std::uint64_t>(std::min<std::uint64_t>(static_cast<std::uint64_t>(workers), n));
  std::vector<Tally> tallies(worker_count);
  {
    std::vector<std::jthread> threads;
    for (std::uint64_t k = 0; k < worker_count; ++k) {
      threads.emplace_back([&, k]() {
        Tally& tally = tallies[k];
        tally.track.assign(s.size(), 0);
        const std::uint64_t begin = n * k / worker_count;
        const std::uint64_t end = n * (k + 1) / worker_count;
        for (std::uint64_t i = begin; i < end; ++i)
          trace_photon(medium, launch, options, derive_seed(source.base_seed, i), tally);
      });
    }
  }

  // Worker-order merge of exact integer tallies.
  std::vector<std::int64_t> track(s.size(), 0);
  std::int64_t deposited = 0;
  std::int64_t escaped = 0;
  for (const Tally& t : tallies) {
    for (std::size_t i = 0; i < s.size(); ++i) track[i] += t.track[i];
    deposited += t.deposited;
    escaped += t.escaped;
  }

  FluenceVolume out;
  out.fluence = Grid3<float>(s);
  out.spacing_mm = h;
  out.wavelength_nm = volume.wavelength_nm;
  out.seed = source.base_seed;
  const double norm = 1.0 / (kFixedScale * static_cast<double>(n) * h * h * h);
  for (std::size_t i = 0; i < s.size(); ++i)
    out.fluence.data[static_cast<Eigen::Index>(i)] = static_cast<float>(static_cast<double>(track[i]) * norm);
  out.deposited_weight = static_cast<double>(deposited) / (kFixedScale * static_cast<double>(n));
  out.escaped_weight = static_cast<double>(escaped) / (kFixedScale * static_cast<double>(n));
  return out;
}

InitialPressureVolume initial_pressure(const FluenceVolume& fluence, const OpticalVolume& optics) {
  require(fluence.shape() == optics.shape(), ErrorCode::kShapeMismatch, "initial_pressure: shape mismatch");
  require(fluence.wavelength_nm == optics.wavelength_nm, ErrorCode::kShapeMismatch,
          "initial_pressure: wavelength mismatch");
  InitialPressureVolume p;
  p.pressure = Grid3<float>(fluence.shape());
  p.pressure.data = optics.mua.data * fluence.fluence.data;
  p.spacing_mm = fluence.spacing_mm;
  p.wavelength_nm = fluence.wavelength_nm;
  return p;
}

}  // namespace pasyn
