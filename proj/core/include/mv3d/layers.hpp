#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mv3d/ops.hpp"
#include "mv3d/rng.hpp"
#include "mv3d/tensor.hpp"

namespace mv3d {

// Named references to the trainable tensors of a module.
template <typename T>
using ParamList = std::vector<std::pair<std::string, Tensor<T>*>>;

template <typename T>
Tensor<T> normal_tensor(Shape shape, double stddev, Rng& rng);

template <typename T>
struct Linear {
  Tensor<T> weight;  // [in, out]
  Tensor<T> bias;    // [out], empty when the layer has no bias

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias = true);

  bool has_bias() const { return bias.numel() > 0; }
  Var<T> operator()(Tape<T>& tape, Var<T> x) const;
  void collect(ParamList<T>& out, const std::string& prefix);
};

template <typename T>
struct LayerNorm {
  Tensor<T> gamma;
  Tensor<T> beta;

  LayerNorm() = default;
  explicit LayerNorm(std::size_t width);

  Var<T> operator()(Tape<T>& tape, Var<T> x) const;
  void collect(ParamList<T>& out, const std::string& prefix);
};

// Pre-norm transformer block: x + MHA(LN(x)), then y + MLP(LN(y)).
template <typename T>
struct TransformerBlock {
  LayerNorm<T> ln1;
  Linear<T> wq, wk, wv, wo;
  LayerNorm<T> ln2;
  Linear<T> fc1, fc2;
  std::size_t heads = 1;

  TransformerBlock() = default;
  TransformerBlock(std::size_t width, std::size_t heads, std::size_t mlp_hidden, Rng& rng);

  // Full self-attention over the packed sequences of `layout`.
  Var<T> operator()(Tape<T>& tape, Var<T> x, const AttentionLayout& layout) const;
  // Evaluates only the rows in `query_rows` (one per segment); keys and values
  // span every row of the segment. `layout.q_offsets` indexes the query rows.
  // The attention node is written to `attention_node` when non-null.
  Var<T> forward_rows(Tape<T>& tape, Var<T> x, std::span<const std::size_t> query_rows,
                      const AttentionLayout& layout, Var<T>* attention_node = nullptr) const;
  void collect(ParamList<T>& out, const std::string& prefix);

 private:
  Var<T> finish(Tape<T>& tape, Var<T> residual, Var<T> attended) const;
};

extern template struct Linear<float>;
extern template struct Linear<double>;
extern template struct LayerNorm<float>;
extern template struct LayerNorm<double>;
extern template struct TransformerBlock<float>;
extern template struct TransformerBlock<double>;

}  // namespace mv3d
