#include "pasyn/mask_io.hpp"

#include <png.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <memory>

#include <nlohmann/json.hpp>

#include "pasyn/error.hpp"

namespace pasyn {

namespace fs = std::filesystem;

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

void write_mask_png(const LabelMap2& m, const fs::path& path) {
  FilePtr file(std::fopen(path.c_str(), "wb"));
  require(file != nullptr, ErrorCode::kIo, "cannot open " + path.string() + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorCode::kIo, "libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorCode::kIo, "libpng failed writing " + path.string());
  }
  const Shape2 s = m.shape();
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(s.x), static_cast<png_uint_32>(s.z), 8, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_byte> row(static_cast<std::size_t>(s.x));
  for (int z = 0; z < s.z; ++z) {
    for (int x = 0; x < s.x; ++x) row[static_cast<std::size_t>(x)] = m(x, z);
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

LabelMap2 read_mask_png(const fs::path& path, double spacing_mm) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  require(file != nullptr, ErrorCode::kIo, "cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorCode::kIo, "libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorCode::kIo, "libpng failed reading " + path.string());
  }
  png_init_io(png, file.get());
  png_read_info(png, info);
  const auto width = png_get_image_width(png, info);
  const auto height = png_get_image_height(png, info);
  const auto color = png_get_color_type(png, info);
  const auto depth = png_get_bit_depth(png, info);
  if (color != PNG_COLOR_TYPE_GRAY || depth != 8) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorCode::kIo, path.string() + ": expected 8-bit single-channel PNG");
  }
  LabelMap2 m(Shape2{static_cast<int>(width), static_cast<int>(height)}, spacing_mm);
  std::vector<png_byte> row(width);
  for (png_uint_32 z = 0; z < height; ++z) {
    png_read_row(png, row.data(), nullptr);
    for (png_uint_32 x = 0; x < width; ++x) m(static_cast<int>(x), static_cast<int>(z)) = row[x];
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return m;
}

std::string mask_stem(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "mask_%05zu", index);
  return buf;
}

void write_mask(const fs::path& dir, std::size_t index, const LabelMap2& m, const MaskMetadata& meta) {
  fs::create_directories(dir);
  const std::string stem = mask_stem(index);
  write_mask_png(m, dir / (stem + ".png"));
  nlohmann::json j = {{"spacing_mm", meta.spacing_mm},
                      {"body_site", meta.body_site},
                      {"seed", meta.seed},
                      {"generator", meta.generator}};
  std::ofstream out(dir / (stem + ".json"));
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot write sidecar for " + stem);
  out << j.dump(2) << '\n';
}

std::vector<StoredMask> read_mask_dataset(const fs::path& dir) {
  require(fs::is_directory(dir), ErrorCode::kIo, "mask directory not found: " + dir.string());
  std::vector<fs::path> pngs;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (entry.path().extension() == ".png" && name.rfind("mask_", 0) == 0) pngs.push_back(entry.path());
  }
  std::sort(pngs.begin(), pngs.end());
  std::vector<StoredMask> out;
  out.reserve(pngs.size());
  for (const auto& png : pngs) {
    MaskMetadata meta;
    fs::path sidecar = png;
    sidecar.replace_extension(".json");
    if (fs::exists(sidecar)) {
      std::ifstream in(sidecar);
      const auto j = nlohmann::json::parse(in);
      meta.spacing_mm = j.value("spacing_mm", meta.spacing_mm);
      meta.body_site = j.value("body_site", meta.body_site);
      meta.seed = j.value("seed", meta.seed);
      meta.generator = j.value("generator", meta.generator);
    }
    out.push_back({read_mask_png(png, meta.spacing_mm), meta, png});
  }
  return out;
}

}  // namespace pasyn
