#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mv3d/layers.hpp"

namespace mv3d {

using TokenSeq = std::vector<std::uint32_t>;

// Id 0 is reserved for [CLS]; content ids are in [1, vocab_size).
inline constexpr std::uint32_t kClsToken = 0;

struct TextEncoderConfig {
  std::size_t vocab_size = 128;
  std::size_t max_len = 96;  // content tokens; longer inputs are truncated
  std::size_t embed_dim = 64;
  std::size_t depth = 2;
  std::size_t heads = 4;
  std::size_t proj_dim = 32;
  std::size_t mlp_hidden = 128;

  void validate() const;
  friend bool operator==(const TextEncoderConfig&, const TextEncoderConfig&) = default;
};

template <typename T>
class TextEncoder {
 public:
  TextEncoder() = default;
  TextEncoder(const TextEncoderConfig& cfg, Rng& rng);

  const TextEncoderConfig& config() const { return cfg_; }

  // [B, proj_dim] unit rows. Identical sequences in the batch are encoded once.
  Var<T> encode(Tape<T>& tape, std::span<const TokenSeq> sequences) const;
  Tensor<T> encode_one(const TokenSeq& tokens) const;

  void collect(ParamList<T>& out, const std::string& prefix);

 private:
  TextEncoderConfig cfg_;
  Tensor<T> token_embed_;  // [vocab, E]
  Tensor<T> pos_embed_;    // [max_len + 1, E]
  std::vector<TransformerBlock<T>> blocks_;
  LayerNorm<T> norm_;
  Linear<T> head_;
};

extern template class TextEncoder<float>;
extern template class TextEncoder<double>;

}  // namespace mv3d
