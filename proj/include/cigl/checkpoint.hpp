#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "cigl/mlp.hpp"
#include "cigl/train.hpp"

namespace cigl {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary layout, all integers little-endian:
///   "CIGL" | u32 version | u8 method | u64 seed | u32 layer count
///   per layer: u32 rank | u32 dims[rank] | f32 weights (row-major)
///              | packed mask bitmap (bit i = flat index i, LSB first, padded to a byte)
///              | u32 bias length | f32 biases
///   u32 n_models
struct Checkpoint {
  Method method = Method::cigl;
  std::uint64_t seed = 0;
  MlpModel model;
  std::vector<Mask> masks;
  std::uint32_t n_models = 0;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Writes to `path.tmp` and renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_file_atomic(const std::filesystem::path& path, std::string_view text);

std::vector<std::uint8_t> pack_mask(const Mask& mask);
Mask unpack_mask(std::span<const std::uint8_t> packed, std::size_t size);

}  // namespace cigl
