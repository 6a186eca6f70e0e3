#pragma once
// Versioned binary parameter blobs. A checkpoint directory holds model.bin
// (this format) and model.json (a metadata record written by the model).
//
// Layout (little-endian):
//   "FRACMIL\0" | u32 version | u32 tensor count |
//   per tensor: u32 name length | name | u64 element count | f32 data

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "fracmil/nn.hpp"

namespace fracmil {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointBlob {
  std::vector<std::pair<std::string, std::vector<float>>> tensors;
};

void write_blob(const std::filesystem::path& path, const CheckpointBlob& blob);
CheckpointBlob read_blob(const std::filesystem::path& path);

// Tensors are named "<prefix>.<index>".
void append_network(CheckpointBlob& blob, const std::string& prefix, const nn::Network& net);
// net must already have the right architecture; sizes are checked.
void load_network(const CheckpointBlob& blob, const std::string& prefix, nn::Network& net);

// Hex FNV-1a of an architecture description.
std::string architecture_hash(const std::string& description);

}  // namespace fracmil
