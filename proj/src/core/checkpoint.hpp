#pragma once

#include <map>
#include <string>
#include <vector>

#include "nn.hpp"
#include "tensor.hpp"

namespace nforge {

// Flat named-tensor container. Layout, all little-endian:
//   magic "NFORGE1" (7 bytes), u64 tensor count, then per tensor:
//   u32 name length, name bytes (UTF-8), u32 rank, u64 extents, f64 values.
// Round trips bit-exactly.
void write_tensor_file(const std::string& path, const std::vector<NamedTensor>& tensors);
std::map<std::string, Tensor> read_tensor_file(const std::string& path);

// Copies values from `src` into existing named parameters; throws on a
// missing name or shape mismatch.
void load_into(std::vector<NamedTensor>& params, const std::map<std::string, Tensor>& src);

}  // namespace nforge
