#pragma once

// Binary trainable-parameter checkpoints.
//
//   "FTT1" | version u32 | count u32 |
//   count x (name_len u16 | name | order u8 | dims u32[order] | f32 values) |
//   crc32 u32 of everything before it
//
// All integers and floats are little-endian. Values are stored as 32-bit
// floats, so doubles round to nearest on save.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fedtt/tensor.hpp"

namespace fedtt {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

std::vector<std::uint8_t> encode_checkpoint(const std::vector<NamedTensor>& entries);
// Throws IoError with the byte offset of the first problem.
std::vector<NamedTensor> decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& entries);
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);

// Human-readable header dump used by `fedtt inspect`.
std::string describe_checkpoint(const std::vector<std::uint8_t>& bytes);

}  // namespace fedtt
