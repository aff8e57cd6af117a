#pragma once

#include <string>
#include <vector>

#include "mat/tensor.hpp"

namespace mat {

// Checkpoint container format, magic "MATCKPT1": per-tensor records of
// (u32 name length, name bytes, u32 rank, u32 shape..., float32 payload),
// all little-endian. Round-trips are bit-exact.
void write_checkpoint(const std::string& path, const std::vector<TensorPtr>& tensors);
std::vector<TensorPtr> read_checkpoint(const std::string& path);

}  // namespace mat
