#pragma once

#include <string>

#include "vle/training.hpp"

namespace vle {

// Archive layout (all integers little-endian):
//   "VLEC" | u32 format_version | u64 manifest_len | manifest (key = "value" lines)
//   | u64 tensor_count | tensor records | "VEND"
// Tensor record: u32 name_len | name | u32 rank | i64 dims[rank] | f32 data[numel]
// Tensors are named param/<name>, adam.m/<name>, adam.v/<name>.

inline constexpr char kCheckpointMagic[4] = {'V', 'L', 'E', 'C'};

/// Writes to a temporary sibling, then renames over `path`.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);

/// Throws FormatError on bad magic, unsupported version, or truncation.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace vle
