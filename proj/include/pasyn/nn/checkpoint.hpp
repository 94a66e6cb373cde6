#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pasyn/nn/layers.hpp"

namespace pasyn::nn {

inline constexpr const char* kCheckpointMagic = "PASYN-CKPT-1\n";

// File layout: magic line, little-endian uint64 JSON length, JSON header
// {"arch": ..., "tensors": [{name, shape, offset}]}, then raw little-endian
// float32 blobs.
struct Checkpoint {
  nlohmann::json arch;
  std::map<std::string, Tensor4<float>> tensors;
};

struct NamedTensor {
  std::string name;
  const Tensor4<float>* value = nullptr;
};

void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& arch,
                     const std::vector<NamedTensor>& tensors);

// Throws corrupt-checkpoint on bad magic, truncation or malformed header.
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Parameters and buffers of a float network, buffers prefixed "buffer:".
std::vector<NamedTensor> state_of(Layer<float>& net);

// Copies matching tensors into the network; every parameter and buffer must
// be present with the stored shape.
void restore_state(Layer<float>& net, const Checkpoint& ckpt, const std::string& prefix = {});

}  // namespace pasyn::nn
