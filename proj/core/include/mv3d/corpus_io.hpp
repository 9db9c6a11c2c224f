#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mv3d/corpus.hpp"

namespace mv3d {

inline constexpr std::uint32_t kCorpusVersion = 1;

// One split of the synthetic corpus as stored on disk.
struct Dataset {
  WorldConfig world;
  std::vector<std::string> vocabulary;
  std::string split;
  std::vector<PairedSample> samples;
};

// Layout (little-endian): "MV3C", u32 version, str world JSON, u32 word count +
// str words, str split name, u64 sample count, then per sample: f32 voxels
// (D*H*W, z-major), u32 R, R bit-packed masks (LSB-first, ceil(D*H*W/8) bytes),
// token sequences (u32 length + u32 ids) for the R region texts, the report,
// the R enriched region texts and the enriched report, R*K u8 labels, and the
// planted blobs (u32 count + {u32 region, u32 disease, u32 z, y, x, u32 radius}).
std::vector<std::uint8_t> encode_dataset(const WorldConfig& world, const std::string& split,
                                         std::span<const PairedSample> samples);
// Throws FormatError with the byte offset of the first inconsistency.
Dataset decode_dataset(std::span<const std::uint8_t> bytes);

void save_dataset(const std::filesystem::path& path, const WorldConfig& world, const std::string& split,
                  std::span<const PairedSample> samples);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace mv3d
