#include "mv3d/layers.hpp"

#include <cmath>

namespace mv3d {

template <typename T>
Tensor<T> normal_tensor(Shape shape, double stddev, Rng& rng) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<T>(stddev * rng.normal());
  t.set_requires_grad(true);
  return t;
}

template <typename T>
Linear<T>::Linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias)
    : weight(normal_tensor<T>({in, out}, std::sqrt(2.0 / static_cast<double>(in + out)), rng)) {
  if (with_bias) {
    bias = Tensor<T>({out});
    bias.set_requires_grad(true);
  }
}

template <typename T>
Var<T> Linear<T>::operator()(Tape<T>& tape, Var<T> x) const {
  auto y = matmul(x, tape.param(weight));
  return has_bias() ? add_bias(y, tape.param(bias)) : y;
}

template <typename T>
void Linear<T>::collect(ParamList<T>& out, const std::string& prefix) {
  out.emplace_back(prefix + ".weight", &weight);
  if (has_bias()) out.emplace_back(prefix + ".bias", &bias);
}

template <typename T>
LayerNorm<T>::LayerNorm(std::size_t width) : gamma({width}, T{1}), beta({width}) {
  gamma.set_requires_grad(true);
  beta.set_requires_grad(true);
}

template <typename T>
Var<T> LayerNorm<T>::operator()(Tape<T>& tape, Var<T> x) const {
  return layer_norm(x, tape.param(gamma), tape.param(beta));
}

template <typename T>
void LayerNorm<T>::collect(ParamList<T>& out, const std::string& prefix) {
  out.emplace_back(prefix + ".gamma", &gamma);
  out.emplace_back(prefix + ".beta", &beta);
}

template <typename T>
TransformerBlock<T>::TransformerBlock(std::size_t width, std::size_t heads_, std::size_t mlp_hidden, Rng& rng)
    : ln1(width),
      wq(width, width, rng),
      wk(width, width, rng),
      wv(width, width, rng),
      wo(width, width, rng),
      ln2(width),
      fc1(width, mlp_hidden, rng),
      fc2(mlp_hidden, width, rng),
      heads(heads_) {}

template <typename T>
Var<T> TransformerBlock<T>::finish(Tape<T>& tape, Var<T> residual, Var<T> attended) const {
  auto y = add(residual, wo(tape, attended));
  return add(y, fc2(tape, gelu(fc1(tape, ln2(tape, y)))));
}

template <typename T>
Var<T> TransformerBlock<T>::operator()(Tape<T>& tape, Var<T> x, const AttentionLayout& layout) const {
  auto h = ln1(tape, x);
  auto a = attention(wq(tape, h), wk(tape, h), wv(tape, h), heads, layout);
  return finish(tape, x, a);
}

template <typename T>
Var<T> TransformerBlock<T>::forward_rows(Tape<T>& tape, Var<T> x, std::span<const std::size_t> query_rows,
                                         const AttentionLayout& layout, Var<T>* attention_node) const {
  auto h = ln1(tape, x);
  auto q = wq(tape, gather_rows(h, query_rows));
  auto a = attention(q, wk(tape, h), wv(tape, h), heads, layout);
  if (attention_node) *attention_node = a;
  return finish(tape, gather_rows(x, query_rows), a);
}

template <typename T>
void TransformerBlock<T>::collect(ParamList<T>& out, const std::string& prefix) {
  ln1.collect(out, prefix + ".ln1");
  wq.collect(out, prefix + ".wq");
  wk.collect(out, prefix + ".wk");
  wv.collect(out, prefix + ".wv");
  wo.collect(out, prefix + ".wo");
  ln2.collect(out, prefix + ".ln2");
  fc1.collect(out, prefix + ".fc1");
  fc2.collect(out, prefix + ".fc2");
}

template Tensor<float> normal_tensor<float>(Shape, double, Rng&);
template Tensor<double> normal_tensor<double>(Shape, double, Rng&);
template struct Linear<float>;
template struct Linear<double>;
template struct LayerNorm<float>;
template struct LayerNorm<double>;
template struct TransformerBlock<float>;
template struct TransformerBlock<double>;

}  // namespace mv3d
