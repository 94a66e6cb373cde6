#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pasyn/geometry.hpp"

namespace pasyn {

struct MaskMetadata {
  double spacing_mm = 0.16;
  std::string body_site = "forearm";
  std::uint64_t seed = 0;
  std::string generator = "literature";  // literature | gan | annotation
};

// 8-bit grayscale PNG, pixel value = class id, width = x, height = z.
void write_mask_png(const LabelMap2& m, const std::filesystem::path& path);
LabelMap2 read_mask_png(const std::filesystem::path& path, double spacing_mm = 0.16);

std::string mask_stem(std::size_t index);  // "mask_%05d"

// Writes <dir>/mask_%05d.png and its .json sidecar.
void write_mask(const std::filesystem::path& dir, std::size_t index, const LabelMap2& m, const MaskMetadata& meta);

struct StoredMask {
  LabelMap2 map;
  MaskMetadata meta;
  std::filesystem::path png;
};

// Reads every mask_*.png (sorted by name) with its sidecar.
std::vector<StoredMask> read_mask_dataset(const std::filesystem::path& dir);

}  // namespace pasyn
