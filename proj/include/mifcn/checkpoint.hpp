#pragma once

#include <filesystem>
#include <iosfwd>

#include "mifcn/model.hpp"

namespace mifcn {

/// Checkpoint container, all integers and reals little-endian:
///
///   "MIFCNCKP" | u32 version | i32 T, C, A, B | u32 n, i32 dilation[n] | f64 h, alpha
///   | u32 count | count x (u32 len, name bytes, u32 rank, i64 extent[rank], f64 data[...])
///
/// Tensors appear in for_each_param order.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  MifcnParams params;
};

void write_checkpoint(std::ostream& os, const MifcnParams& params, const ModelConfig& config);
Checkpoint read_checkpoint(std::istream& is);

void save_checkpoint(const MifcnParams& params, const ModelConfig& config, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Loads and requires the stored architecture (T, C, A, B, dilations) to match `expected`.
Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected);

}  // namespace mifcn
