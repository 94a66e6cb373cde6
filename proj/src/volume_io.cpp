#include "pasyn/volume_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "pasyn/error.hpp"

namespace pasyn {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "float payloads assume a little-endian host");

fs::path header_path(const fs::path& payload) { return fs::path(payload.string() + ".json"); }

void write_float_payload(const fs::path& path, const float* data, std::size_t count) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * sizeof(float)));
  require(static_cast<bool>(out), ErrorCode::kIo, "short write to " + path.string());
}

std::vector<float> read_float_payload(const fs::path& path, std::size_t count) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open " + path.string());
  const auto bytes = static_cast<std::size_t>(in.tellg());
  require(bytes == count * sizeof(float), ErrorCode::kIo,
          path.string() + ": payload has " + std::to_string(bytes) + " bytes, header implies " +
              std::to_string(count * sizeof(float)));
  in.seekg(0);
  std::vector<float> data(count);
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(bytes));
  return data;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kIo, path.string() + ": " + e.what());
  }
}

void write_vol(const fs::path& path, const VolumeHeader& header, const std::vector<const Grid3<float>*>& fields) {
  require(fields.size() == header.fields.size(), ErrorCode::kShapeMismatch, "write_vol: field count mismatch");
  std::vector<float> payload;
  payload.reserve(header.shape.size() * fields.size());
  for (const auto* f : fields) {
    require(f->shape == header.shape, ErrorCode::kShapeMismatch, "write_vol: field shape mismatch");
    payload.insert(payload.end(), f->data.data(), f->data.data() + f->data.size());
  }
  write_float_payload(path, payload.data(), payload.size());
  nlohmann::json j = {{"shape", {header.shape.x, header.shape.y, header.shape.z}},
                      {"spacing_mm", header.spacing_mm},
                      {"wavelength_nm", header.wavelength_nm},
                      {"kind", header.kind},
                      {"seed", header.seed},
                      {"fields", header.fields},
                      {"dtype", "float32-le"},
                      {"order", "x-fastest"}};
  for (const auto& [k, v] : header.extra.items()) j[k] = v;
  write_json(header_path(path), j);
}

VolumeHeader read_vol_header(const fs::path& path) {
  const auto j = read_json(header_path(path));
  VolumeHeader h;
  try {
    const auto shape = j.at("shape");
    h.shape = {shape.at(0).get<int>(), shape.at(1).get<int>(), shape.at(2).get<int>()};
    h.spacing_mm = j.at("spacing_mm").get<double>();
    h.wavelength_nm = j.value("wavelength_nm", 0.0);
    h.kind = j.value("kind", std::string());
    h.seed = j.value("seed", std::uint64_t{0});
    h.fields = j.value("fields", std::vector<std::string>{"value"});
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kIo, header_path(path).string() + ": " + e.what());
  }
  return h;
}

std::vector<Grid3<float>> read_vol(const fs::path& path, VolumeHeader* header_out) {
  const VolumeHeader h = read_vol_header(path);
  const auto payload = read_float_payload(path, h.shape.size() * h.fields.size());
  std::vector<Grid3<float>> fields;
  for (std::size_t k = 0; k < h.fields.size(); ++k) {
    Grid3<float> g(h.shape);
    std::memcpy(g.data.data(), payload.data() + k * h.shape.size(), h.shape.size() * sizeof(float));
    fields.push_back(std::move(g));
  }
  if (header_out) *header_out = h;
  return fields;
}

void write_fluence(const fs::path& path, const FluenceVolume& f) {
  VolumeHeader h;
  h.shape = f.shape();
  h.spacing_mm = f.spacing_mm;
  h.wavelength_nm = f.wavelength_nm;
  h.kind = "fluence";
  h.seed = f.seed;
  h.extra = {{"escaped_weight", f.escaped_weight}, {"deposited_weight", f.deposited_weight}};
  write_vol(path, h, {&f.fluence});
}

FluenceVolume read_fluence(const fs::path& path) {
  VolumeHeader h;
  auto fields = read_vol(path, &h);
  require(h.kind == "fluence", ErrorCode::kIo, path.string() + ": not a fluence volume");
  const auto j = read_json(header_path(path));
  FluenceVolume f;
  f.fluence = std::move(fields.front());
  f.spacing_mm = h.spacing_mm;
  f.wavelength_nm = h.wavelength_nm;
  f.seed = h.seed;
  f.escaped_weight = j.value("escaped_weight", 0.0);
  f.deposited_weight = j.value("deposited_weight", 0.0);
  return f;
}

void write_optical(const fs::path& path, const OpticalVolume& v, std::uint64_t seed) {
  VolumeHeader h;
  h.shape = v.shape();
  h.spacing_mm = v.spacing_mm;
  h.wavelength_nm = v.wavelength_nm;
  h.kind = "optical";
  h.seed = seed;
  h.fields = {"mua", "mus", "g", "n"};
  write_vol(path, h, {&v.mua, &v.mus, &v.g, &v.n});
}

OpticalVolume read_optical(const fs::path& path) {
  VolumeHeader h;
  auto fields = read_vol(path, &h);
  require(h.kind == "optical" && fields.size() == 4, ErrorCode::kIo, path.string() + ": not an optical volume");
  OpticalVolume v(h.shape, h.spacing_mm, h.wavelength_nm);
  v.mua = std::move(fields[0]);
  v.mus = std::move(fields[1]);
  v.g = std::move(fields[2]);
  v.n = std::move(fields[3]);
  return v;
}

void write_pressure(const fs::path& path, const InitialPressureVolume& p, std::uint64_t seed) {
  VolumeHeader h;
  h.shape = p.shape();
  h.spacing_mm = p.spacing_mm;
  h.wavelength_nm = p.wavelength_nm;
  h.kind = "pressure";
  h.seed = seed;
  write_vol(path, h, {&p.pressure});
}

}  // namespace pasyn
