#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "tensor/tensor.hpp"

namespace ds::checkpoint {

inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr char kTensorFile[] = "tensors.bin";
inline constexpr char kManifestFile[] = "manifest.json";

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

// Flat container: "DSTC", u32 version, u32 count, then per entry
// u32 name_len, name, u32 rank, u64 dims[rank], f32 payload[numel]; all little-endian.
void write_container(const std::filesystem::path& path, const NamedTensors& tensors);
NamedTensors read_container(const std::filesystem::path& path);

// Checkpoint directory = container + JSON manifest (format_version is added on save).
void save(const std::filesystem::path& dir, const NamedTensors& tensors, nlohmann::json manifest);
std::pair<NamedTensors, nlohmann::json> load(const std::filesystem::path& dir);

}  // namespace ds::checkpoint
