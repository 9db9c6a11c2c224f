#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mv3d/trainer.hpp"

namespace mv3d {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointHeader {
  std::uint32_t version = 0;
  std::string config_json;
  std::uint64_t step = 0;
};

// Layout (little-endian): "MV3D", u32 version, str config, u64 step,
// u32 tensor count + {str name, u32 rank, u64 extents[rank], f32 data},
// bank block, str rng state. Optimizer moments are stored as tensors named
// "adam.m/<param>" and "adam.v/<param>"; the optimizer step count as u64 after them.
std::vector<std::uint8_t> encode_checkpoint(const TrainState& state, const std::string& config_json);
// Reads only the header; throws FormatError on a bad magic or version.
CheckpointHeader peek_checkpoint(std::span<const std::uint8_t> bytes);
// Overwrites `state`, which must have been built from the stored config.
// Every tensor must be present with the expected shape.
void decode_checkpoint(std::span<const std::uint8_t> bytes, TrainState& state);

void save_checkpoint(const std::filesystem::path& path, const TrainState& state, const std::string& config_json);

}  // namespace mv3d
