#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "s2st/core/tensor.hpp"

namespace s2st {

// Ordered (name, tensor) list as stored in a named-tensor file.
using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

// Named-tensor file layout (all integers little-endian):
//   magic "S2NT" | u32 version (1) | u32 count
//   per tensor: u32 name_bytes | UTF-8 name | u32 rank | u64 dims[rank]
//               | f64 payload[prod(dims)] (IEEE-754 binary64, little-endian)
// Doubles round-trip bit-exactly.
void save_named_tensors(const std::filesystem::path& path, const NamedTensors& tensors);
NamedTensors load_named_tensors(const std::filesystem::path& path);

std::string encode_named_tensors(const NamedTensors& tensors);
NamedTensors decode_named_tensors(const std::string& bytes);

}  // namespace s2st
