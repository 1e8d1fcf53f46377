#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "cmslstm/nn.hpp"

namespace cmslstm {

// CMSL checkpoint, little-endian throughout:
//   "CMSL" | version u32 | entry count u32
//   values:  per entry: name (u32 len + bytes) | rank u32 | dims u32 x rank | f64 x n
//   moments: the same entry layout holding m, then again holding v
//   trailer: t u64 | lr, beta1, beta2, eps, weight_decay f64
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  nn::ParamStore store;
  nn::AdamWState optimizer;
};

std::vector<std::uint8_t> encode_checkpoint(const nn::ParamStore& store, const nn::AdamWState& opt);
/// Throws FormatError on bad magic, version mismatch, truncation or trailing bytes.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const nn::ParamStore& store, const nn::AdamWState& opt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace cmslstm
