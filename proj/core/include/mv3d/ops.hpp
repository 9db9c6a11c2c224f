#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mv3d/tape.hpp"

// Differentiable operations over Tape values. Row-wise ops treat the last
// axis as the feature axis and every leading index as a row.
namespace mv3d {

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b);
template <typename T>
Var<T> transpose(Var<T> a);

template <typename T>
Var<T> add(Var<T> a, Var<T> b);
template <typename T>
Var<T> sub(Var<T> a, Var<T> b);
template <typename T>
Var<T> mul(Var<T> a, Var<T> b);
// x[..., n] + bias[n]; the only broadcast supported.
template <typename T>
Var<T> add_bias(Var<T> x, Var<T> bias);
template <typename T>
Var<T> scale(Var<T> x, T factor);
// x * s for a 0-d s.
template <typename T>
Var<T> mul_scalar(Var<T> x, Var<T> s);
template <typename T>
Var<T> div_scalar(Var<T> x, Var<T> s);
template <typename T>
Var<T> exp(Var<T> x);

template <typename T>
Var<T> softmax(Var<T> x);
template <typename T>
Var<T> log_softmax(Var<T> x);
// Throws DegenerateInputError on an all-zero row.
template <typename T>
Var<T> l2_normalize(Var<T> x);
template <typename T>
Var<T> layer_norm(Var<T> x, T eps = T(1e-5));
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-5));
// Exact (erf) GELU.
template <typename T>
Var<T> gelu(Var<T> x);

// [m, n] -> [n], mean over rows.
template <typename T>
Var<T> mean_pool(Var<T> x);
template <typename T>
Var<T> gather_rows(Var<T> x, std::span<const std::size_t> indices);
template <typename T>
Var<T> concat_rows(std::span<const Var<T>> parts);
// [m, n] -> [m], picking column cols[i] from row i.
template <typename T>
Var<T> select_per_row(Var<T> x, std::span<const std::size_t> cols);
template <typename T>
Var<T> sum(Var<T> x);
template <typename T>
Var<T> mean(Var<T> x);
template <typename T>
Var<T> reshape(Var<T> x, Shape shape);

// Packed multi-head attention. Query rows [q_offsets[s], q_offsets[s+1])
// attend only to key/value rows [kv_offsets[s], kv_offsets[s+1]).
struct AttentionLayout {
  std::vector<std::size_t> q_offsets;
  std::vector<std::size_t> kv_offsets;

  std::size_t segments() const { return q_offsets.empty() ? 0 : q_offsets.size() - 1; }
  // Self-attention over consecutive sequences of the given lengths.
  static AttentionLayout self(std::span<const std::size_t> lengths);
};

template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, std::size_t heads, const AttentionLayout& layout);

// Softmax weights saved by attention(): per segment, per head, a row-major
// [q_len, kv_len] block, segments outermost.
template <typename T>
std::span<const T> attention_probs(Var<T> attention_output);

template <typename T>
bool all_finite(std::span<const T> values);

}  // namespace mv3d
