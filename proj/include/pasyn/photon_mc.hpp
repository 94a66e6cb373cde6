#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <optional>

#include "pasyn/grid.hpp"
#include "pasyn/tissue_optics.hpp"

namespace pasyn {

// Illumination on the top face (z = 0) of the volume.
struct SourceSpec {
  // Aperture center in mm; unset means the center of the top face.
  std::optional<double> center_x_mm;
  std::optional<double> center_y_mm;
  double aperture_x_mm = 30.0;
  double aperture_y_mm = 2.0;
  Eigen::Vector3d direction{0.0, 0.0, 1.0};
  double divergence_deg = 5.0;
  std::uint64_t photon_count = 100000;
  std::uint64_t base_seed = 0;

  void validate() const;

  static SourceSpec pencil_beam(std::uint64_t photons, std::uint64_t seed);
};

struct TransportOptions {
  double roulette_threshold = 1e-4;
  double roulette_survival = 0.1;
};

// Fluence per unit launched energy (1/mm^2).
struct FluenceVolume {
  Grid3<float> fluence;
  double spacing_mm = 0.16;
  double wavelength_nm = 800.0;
  double escaped_weight = 0.0;
  double deposited_weight = 0.0;
  std::uint64_t seed = 0;

  const Shape3& shape() const { return fluence.shape; }
};

struct InitialPressureVolume {
  Grid3<float> pressure;
  double spacing_mm = 0.16;
  double wavelength_nm = 800.0;

  const Shape3& shape() const { return pressure.shape; }
};

// Henyey-Greenstein cosine for a uniform variate xi in [0, 1).
inline double sample_hg(double g, double xi) {
  if (std::abs(g) < 1e-6) return 2.0 * xi - 1.0;
  const double t = (1.0 - g * g) / (1.0 - g + 2.0 * g * xi);
  const double cos_theta = (1.0 + g * g - t * t) / (2.0 * g);
  return cos_theta < -1.0 ? -1.0 : (cos_theta > 1.0 ? 1.0 : cos_theta);
}

template <typename Engine>
double sample_hg(double g, Engine& rng) {
  return sample_hg(g, uniform(rng, 0.0, 1.0));
}

inline double sample_hg(double g, CounterRng& rng) { return sample_hg(g, rng.uniform()); }

// Voxel-stepping photon transport with implicit capture and roulette.
// Photon i draws from the stream derive_seed(base_seed, i); accumulators are
// fixed point, so the result does not depend on `workers`.
FluenceVolume simulate_fluence(const OpticalVolume& volume, const SourceSpec& source, int workers,
                               const TransportOptions& options = {});

// p0 = mua * fluence (Grueneisen parameter fixed to 1).
InitialPressureVolume initial_pressure(const FluenceVolume& fluence, const OpticalVolume& optics);

}  // namespace pasyn
