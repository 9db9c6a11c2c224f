#include "mv3d/text_encoder.hpp"

#include <map>

#include "mv3d/error.hpp"

namespace mv3d {

void TextEncoderConfig::validate() const {
  if (vocab_size < 2) throw ConfigError("text vocab_size must be at least 2");
  if (max_len == 0) throw ConfigError("text max_len must be positive");
  if (depth == 0) throw ConfigError("text depth must be positive");
  if (embed_dim == 0 || heads == 0 || embed_dim % heads != 0)
    throw ConfigError("text embed_dim must be a positive multiple of heads");
  if (proj_dim == 0 || mlp_hidden == 0) throw ConfigError("text proj_dim and mlp_hidden must be positive");
}

template <typename T>
TextEncoder<T>::TextEncoder(const TextEncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  const auto e = cfg_.embed_dim;
  token_embed_ = normal_tensor<T>({cfg_.vocab_size, e}, 0.02, rng);
  pos_embed_ = normal_tensor<T>({cfg_.max_len + 1, e}, 0.02, rng);
  for (std::size_t i = 0; i < cfg_.depth; ++i) blocks_.emplace_back(e, cfg_.heads, cfg_.mlp_hidden, rng);
  norm_ = LayerNorm<T>(e);
  head_ = Linear<T>(e, cfg_.proj_dim, rng, false);
}

template <typename T>
Var<T> TextEncoder<T>::encode(Tape<T>& tape, std::span<const TokenSeq> sequences) const {
  if (sequences.empty()) throw EmptyBatchError("encode: no sequences");
  std::map<TokenSeq, std::size_t> unique;
  std::vector<std::size_t> slot(sequences.size());
  std::vector<const TokenSeq*> distinct;
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    auto [it, inserted] = unique.emplace(sequences[i], distinct.size());
    if (inserted) distinct.push_back(&sequences[i]);
    slot[i] = it->second;
  }

  std::vector<std::size_t> ids, positions, lengths, cls_rows;
  for (const auto* seq : distinct) {
    const std::size_t len = std::min(seq->size(), cfg_.max_len);
    cls_rows.push_back(ids.size());
    ids.push_back(kClsToken);
    positions.push_back(0);
    for (std::size_t j = 0; j < len; ++j) {
      const auto id = (*seq)[j];
      if (id == kClsToken || id >= cfg_.vocab_size)
        throw DimensionError("token id " + std::to_string(id) + " outside content range [1, " +
                             std::to_string(cfg_.vocab_size) + ")");
      ids.push_back(id);
      positions.push_back(j + 1);
    }
    lengths.push_back(len + 1);
  }

  auto x = add(gather_rows(tape.param(token_embed_), ids), gather_rows(tape.param(pos_embed_), positions));
  const auto layout = AttentionLayout::self(lengths);
  for (const auto& block : blocks_) x = block(tape, x, layout);
  auto out = l2_normalize(head_(tape, norm_(tape, gather_rows(x, cls_rows))));
  if (distinct.size() == sequences.size()) return out;
  return gather_rows(out, slot);
}

template <typename T>
Tensor<T> TextEncoder<T>::encode_one(const TokenSeq& tokens) const {
  Tape<T> tape(false);
  return reshape(encode(tape, std::span(&tokens, 1)), {cfg_.proj_dim}).to_tensor();
}

template <typename T>
void TextEncoder<T>::collect(ParamList<T>& out, const std::string& prefix) {
  out.emplace_back(prefix + ".token_embed", &token_embed_);
  out.emplace_back(prefix + ".pos_embed", &pos_embed_);
  for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect(out, prefix + ".block" + std::to_string(i));
  norm_.collect(out, prefix + ".norm");
  head_.collect(out, prefix + ".head");
}

template class TextEncoder<float>;
template class TextEncoder<double>;

}  // namespace mv3d
