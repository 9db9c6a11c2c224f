#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mv3d/layers.hpp"
#include "mv3d/volume.hpp"

namespace mv3d {

struct VisionEncoderConfig {
  Extent3 volume_shape{16, 32, 32};
  Extent3 patch_size{8, 8, 8};
  std::size_t embed_dim = 64;
  std::size_t depth = 4;
  std::size_t heads = 4;
  std::size_t proj_dim = 32;
  std::size_t mlp_hidden = 128;

  Extent3 grid() const;
  std::size_t tokens() const { return extent_volume(grid()); }
  std::size_t patch_voxels() const { return extent_volume(patch_size); }
  // Throws ConfigError on indivisible shapes or invalid widths.
  void validate() const;
  friend bool operator==(const VisionEncoderConfig&, const VisionEncoderConfig&) = default;
};

// Patch-grid cells (flat index z*h*w + y*w + x) a region pathway attends to.
struct TokenSelection {
  std::size_t volume = 0;  // index into the batch passed to latent()
  std::vector<std::size_t> cells;
};

// Dual-pathway ViT. Blocks 1..depth-1 run over patch tokens only and produce
// the latent tokens; the last block runs once per pathway with a [CLS] token
// prepended to the selected latent tokens, and only the [CLS] row is read.
// The global pathway selects every cell, so a full-mask region embedding is
// the global embedding.
template <typename T>
class VisionEncoder {
 public:
  VisionEncoder() = default;
  VisionEncoder(const VisionEncoderConfig& cfg, Rng& rng);

  const VisionEncoderConfig& config() const { return cfg_; }

  // [tokens, patch_voxels]; row t holds the voxels of grid cell t.
  Tensor<T> patchify(const Volume& volume) const;
  // Cell is active iff at least half of its voxels are set.
  std::vector<std::uint8_t> downsample_mask(const RegionMask& mask) const;
  std::vector<std::size_t> active_cells(const RegionMask& mask) const;

  // Linear patch projection, optionally with positional embeddings: [B*tokens, E].
  Var<T> patch_embed(Tape<T>& tape, std::span<const Volume* const> volumes, bool with_position = true) const;
  // Output of blocks 1..depth-1: [B*tokens, E].
  Var<T> latent(Tape<T>& tape, std::span<const Volume* const> volumes) const;
  // Final block over [CLS] + selected latent tokens, projected and normalized: [n, proj_dim].
  Var<T> pool(Tape<T>& tape, Var<T> latent_tokens, std::span<const TokenSelection> selections,
              Var<T>* attention_node = nullptr) const;

  Tensor<T> encode_global(const Volume& volume) const;
  // Throws EmptyRegionError when no cell is active.
  Tensor<T> encode_region(const Volume& volume, const RegionMask& mask) const;

  void collect(ParamList<T>& out, const std::string& prefix);

 private:
  void check_volume(const Volume& volume) const;

  VisionEncoderConfig cfg_;
  Linear<T> patch_proj_;
  Tensor<T> pos_embed_;  // [tokens, E]
  Tensor<T> cls_token_;  // [1, E]
  std::vector<TransformerBlock<T>> blocks_;
  LayerNorm<T> norm_;
  Linear<T> head_;
};

extern template class VisionEncoder<float>;
extern template class VisionEncoder<double>;

}  // namespace mv3d
