#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pasyn/grid.hpp"
#include "pasyn/photon_mc.hpp"
#include "pasyn/tissue_optics.hpp"

namespace pasyn {

// Little-endian float32 payload plus a JSON header stored next to it as
// "<path>.json".
std::filesystem::path header_path(const std::filesystem::path& payload);

void write_float_payload(const std::filesystem::path& path, const float* data, std::size_t count);
std::vector<float> read_float_payload(const std::filesystem::path& path, std::size_t count);

void write_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& path);

// .vol: 3D volumes. `kind` is one of optical | fluence | pressure | mua.
struct VolumeHeader {
  Shape3 shape;
  double spacing_mm = 0.16;
  double wavelength_nm = 0.0;
  std::string kind;
  std::uint64_t seed = 0;
  std::vector<std::string> fields{"value"};
  nlohmann::json extra = nlohmann::json::object();
};

void write_vol(const std::filesystem::path& path, const VolumeHeader& header, const std::vector<const Grid3<float>*>& fields);
VolumeHeader read_vol_header(const std::filesystem::path& path);
std::vector<Grid3<float>> read_vol(const std::filesystem::path& path, VolumeHeader* header = nullptr);

void write_fluence(const std::filesystem::path& path, const FluenceVolume& f);
FluenceVolume read_fluence(const std::filesystem::path& path);
void write_optical(const std::filesystem::path& path, const OpticalVolume& v, std::uint64_t seed);
OpticalVolume read_optical(const std::filesystem::path& path);
void write_pressure(const std::filesystem::path& path, const InitialPressureVolume& p, std::uint64_t seed);

}  // namespace pasyn
