#include "pasyn/nn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "pasyn/error.hpp"

namespace pasyn::nn {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void save_checkpoint(const fs::path& path, const nlohmann::json& arch, const std::vector<NamedTensor>& tensors) {
  nlohmann::json index = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& t : tensors) {
    const Shape4& s = t.value->shape();
    index.push_back({{"name", t.name}, {"shape", {s.n, s.c, s.h, s.w}}, {"offset", offset}});
    offset += static_cast<std::uint64_t>(s.size());
  }
  const std::string header = nlohmann::json{{"arch", arch}, {"tensors", index}}.dump();
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot write checkpoint " + path.string());
  const std::uint64_t length = header.size();
  out.write(kCheckpointMagic, static_cast<std::streamsize>(std::strlen(kCheckpointMagic)));
  out.write(reinterpret_cast<const char*>(&length), sizeof length);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& t : tensors)
    out.write(reinterpret_cast<const char*>(t.value->data()), static_cast<std::streamsize>(sizeof(float) * t.value->size()));
  require(static_cast<bool>(out), ErrorCode::kIo, "failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open checkpoint " + path.string());
  const std::string where = "checkpoint " + path.string() + ": ";
  const std::size_t magic_len = std::strlen(kCheckpointMagic);
  std::string magic(magic_len, '\0');
  in.read(magic.data(), static_cast<std::streamsize>(magic_len));
  require(in && magic == kCheckpointMagic, ErrorCode::kCorruptCheckpoint, where + "bad magic");
  std::uint64_t length = 0;
  in.read(reinterpret_cast<char*>(&length), sizeof length);
  require(in && length < (1ULL << 32), ErrorCode::kCorruptCheckpoint, where + "bad header length");
  std::string header(length, '\0');
  in.read(header.data(), static_cast<std::streamsize>(length));
  require(static_cast<bool>(in), ErrorCode::kCorruptCheckpoint, where + "truncated header");

  Checkpoint ckpt;
  try {
    const auto j = nlohmann::json::parse(header);
    ckpt.arch = j.at("arch");
    std::uint64_t expected = 0;
    for (const auto& t : j.at("tensors")) {
      const auto shape = t.at("shape").get<std::vector<int>>();
      require(shape.size() == 4 && std::all_of(shape.begin(), shape.end(), [](int v) { return v >= 0; }),
              ErrorCode::kCorruptCheckpoint, where + "bad tensor shape");
      require(t.at("offset").get<std::uint64_t>() == expected, ErrorCode::kCorruptCheckpoint, where + "bad offset");
      Tensor4<float> value(shape[0], shape[1], shape[2], shape[3]);
      in.read(reinterpret_cast<char*>(value.data()), static_cast<std::streamsize>(sizeof(float) * value.size()));
      require(static_cast<bool>(in), ErrorCode::kCorruptCheckpoint, where + "truncated tensor data");
      expected += static_cast<std::uint64_t>(value.size());
      ckpt.tensors.emplace(t.at("name").get<std::string>(), std::move(value));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kCorruptCheckpoint, where + e.what());
  }
  in.peek();
  require(in.eof(), ErrorCode::kCorruptCheckpoint, where + "trailing bytes");
  return ckpt;
}

std::vector<NamedTensor> state_of(Layer<float>& net) {
  std::vector<NamedTensor> out;
  for (const auto& p : net.parameters()) out.push_back({p.name, p.value});
  for (const auto& b : net.buffers()) out.push_back({"buffer:" + b.name, b.value});
  return out;
}

void restore_state(Layer<float>& net, const Checkpoint& ckpt, const std::string& prefix) {
  auto copy = [&](const std::string& name, Tensor4<float>* dst) {
    const auto it = ckpt.tensors.find(prefix + name);
    require(it != ckpt.tensors.end(), ErrorCode::kCorruptCheckpoint, "checkpoint lacks tensor '" + prefix + name + "'");
    require(it->second.shape() == dst->shape(), ErrorCode::kCorruptCheckpoint,
            "checkpoint tensor '" + prefix + name + "' has shape " + to_string(it->second.shape()) + ", expected " +
                to_string(dst->shape()));
    *dst = it->second;
  };
  for (const auto& p : net.parameters()) copy(p.name, p.value);
  for (const auto& b : net.buffers()) copy("buffer:" + b.name, b.value);
}

}  // namespace pasyn::nn
