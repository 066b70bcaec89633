#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

namespace instructir {

inline constexpr std::int64_t kCheckpointVersion = 1;

// Named-tensor container. On disk:
//   "IRCKPT\0\1" | u64 little-endian manifest length | manifest JSON | tensor payload
// The manifest carries `meta` (config, config hash, D, d_v, step, ...) and one
// entry per tensor {name, dtype, shape, offset, nbytes}; payload bytes are the
// raw contiguous tensor storage, so a read/write round trip is bit-exact.
struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, torch::Tensor>> tensors;

  void add(std::string name, const torch::Tensor& tensor);
  bool has(std::string_view name) const;
  const torch::Tensor& at(std::string_view name) const;
  // All tensors whose name starts with `prefix`, prefix stripped.
  std::vector<std::pair<std::string, torch::Tensor>> with_prefix(std::string_view prefix) const;
};

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& checkpoint);
Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes);

// Atomic: writes a temporary file then renames it over `path`.
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Copies a module's named parameters and buffers into the container under
// `prefix`, and back. load_module requires every name and shape to match.
void store_module(Checkpoint& checkpoint, const std::string& prefix, const torch::nn::Module& module);
void load_module(const Checkpoint& checkpoint, const std::string& prefix, torch::nn::Module& module);

std::uint64_t tensor_checksum(const torch::Tensor& tensor, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t parameters_checksum(const std::vector<torch::Tensor>& tensors);

}  // namespace instructir
