#include "mv3d/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "mv3d/error.hpp"

namespace mv3d {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

struct RowView {
  std::size_t rows;
  std::size_t cols;
};

RowView row_view(const Shape& s) {
  if (s.empty()) return {1, 1};
  std::size_t cols = s.back();
  return {shape_numel(s) / cols, cols};
}

template <typename T>
ConstMatMap<T> cmap(const std::vector<T>& v, std::size_t r, std::size_t c) {
  return ConstMatMap<T>(v.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

template <typename T>
MatMap<T> mmap(std::vector<T>& v, std::size_t r, std::size_t c) {
  return MatMap<T>(v.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

// Eigen picks vectorized or scalar code paths from the runtime address of the
// data, which changes the rounding. Products therefore run on Eigen-owned
// (aligned) copies so results depend only on the values.
template <typename T>
RowMat<T> load(const std::vector<T>& v, std::size_t r, std::size_t c) {
  return cmap(v, r, c);
}

template <typename T>
void accumulate(std::vector<T>& dst, const RowMat<T>& src) {
  const T* p = src.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += p[i];
}

template <typename T>
void same_tape(Var<T> a, Var<T> b, const char* op) {
  if (a.tape != b.tape) throw ContractError(std::string(op) + ": operands recorded on different tapes");
}

template <typename T>
void require_same_shape(Var<T> a, Var<T> b, const char* op) {
  same_tape(a, b, op);
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

template <typename T>
void require_scalar(Var<T> s, const char* op) {
  if (!s.shape().empty()) throw DimensionError(std::string(op) + ": expected a 0-d scalar, got " + shape_str(s.shape()));
}

template <typename T>
std::vector<T> copy_value(Var<T> x) {
  auto v = x.value();
  return {v.begin(), v.end()};
}

}  // namespace

AttentionLayout AttentionLayout::self(std::span<const std::size_t> lengths) {
  AttentionLayout layout;
  layout.q_offsets.reserve(lengths.size() + 1);
  layout.q_offsets.push_back(0);
  for (auto len : lengths) layout.q_offsets.push_back(layout.q_offsets.back() + len);
  layout.kv_offsets = layout.q_offsets;
  return layout;
}

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  same_tape(a, b, "matmul");
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0])
    throw DimensionError("matmul: incompatible shapes " + shape_str(sa) + " and " + shape_str(sb));
  const std::size_t m = sa[0], k = sa[1], n = sb[1];
  auto& tape = *a.tape;
  const RowMat<T> c = load(tape.node(a.id).value, m, k) * load(tape.node(b.id).value, k, n);
  std::vector<T> out(c.data(), c.data() + c.size());
  return tape.record({m, n}, std::move(out), {a.id, b.id}, [m, k, n](Tape<T>& t, std::size_t self) {
    const auto& node = t.node(self);
    const RowMat<T> g = load(node.grad, m, n);
    const std::size_t ia = node.parents[0], ib = node.parents[1];
    if (t.needs_grad(ia)) {
      const RowMat<T> ga = g * load(t.node(ib).value, k, n).transpose();
      accumulate(t.grad_of(ia), ga);
    }
    if (t.needs_grad(ib)) {
      const RowMat<T> gb = load(t.node(ia).value, m, k).transpose() * g;
      accumulate(t.grad_of(ib), gb);
    }
  });
}

template <typename T>
Var<T> transpose(Var<T> a) {
  const auto& s = a.shape();
  if (s.size() != 2) throw DimensionError("transpose: expected rank 2, got " + shape_str(s));
  const std::size_t m = s[0], n = s[1];
  std::vector<T> out(m * n);
  mmap(out, n, m) = cmap(a.tape->node(a.id).value, m, n).transpose();
  return a.tape->record({n, m}, std::move(out), {a.id}, [m, n](Tape<T>& t, std::size_t self) {
    const auto& node = t.node(self);
    mmap(t.grad_of(node.parents[0]), m, n) += cmap(node.grad, n, m).transpose();
  });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same_shape(a, b, "add");
  auto out = copy_value(a);
  auto bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return a.tape->record(a.shape(), std::move(out), {a.id, b.id}, [](Tape<T>& t, std::size_t self) {
    const auto& node = t.node(self);
    for (auto p : node.parents) {
      if (!t.needs_grad(p)) continue;
      auto& g = t.grad_of(p);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.grad[i];
    }
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  require_same_shape(a, b, "sub");
  auto out = copy_value(a);
  auto bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return a.tape->record(a.shape(), std::move(out), {a.id, b.id}, [](Tape<T>& t, std::size_t self) {
    const auto& node = t.node(self);
    if (t.needs_grad(node.parents[0])) {
      auto& g = t.grad_of(node.parents[0]);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.grad[i];
    }
    if (t.needs_grad(node.parents[1])) {
      auto& g = t.grad_of(node.parents[1]);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= node.grad[i];
    }
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same_shape(a, b, "mul");
  auto out = copy_value(a);
  auto bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return a.tape->record(a.shape(), std::move(out), {a.id, b.id}, [](Tape<T>& t, std::size_t self) {
    const auto& node = t.node(self);
    const std::size_t ia = node.parents[0], ib = node.parents[1];
    if (t.needs_grad(ia)) {
      auto& g = t.grad_of(ia);
      const auto& bv = t.node(ib).value;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.grad[i] * bv[i];
    }
    if (t.needs_grad(ib)) {
      auto& g = t.grad_of(ib);
      const auto& av = t.node(ia).value;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.grad[i] * av[i];
    }
  });
}

template <typename T>
Var<T> add_bias(Var<T> x, Var<T> bias) {
  same_tape(x, bias, "add_bias");
  const auto [rows, cols] = row_view(x.shape());
  if (bias.shape().size() != 1 || bias.shape()[0] != cols)
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not match trailing axis of " +
                         shape_str(x.shape()));
  auto out = copy_value(x);
  const auto& bv = x.tape->node(bias.id).value;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += bv[c];
  return x.tape->record(x.shape(), std::move(out), {x.id, bias.id},
                        [rows = rows, cols = cols](Tape<T>& t, std::size_t self) {
                          const auto& node = t.node(self);
                          if (t.needs_grad(node.parents[0])) {
                            auto& g = t.grad_of(node.parents[0]);
                            for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.grad[i];
                          }
                          if (t.needs_grad(node.parents[1])) {
                            auto& g = t.grad_of(node.parents[1]);
                            for (std::size_t r = 0; r < rows; ++r)
                              for (std::size_t c = 0; c < cols; ++c) g[c] += node.grad[r * cols + c];
                          }
                        });
}

template <typename T>
Var<T> scale(Var<T> x, T factor) {
  auto out = copy_value(x);
  for (auto& v : out) v *= factor;
  return x.tape->record(x.shape(), std::move(out), {x.id}, [factor](Tape<T>& t, std::size_t self) {
    const auto& node = t.node(self);
    auto& g = t.grad_of(node.parents[0]);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.grad[i] * factor;
  });
}

template <typename T>
Var<T> mul_scalar(Var<T> x, Var<T> s) {
  same_tape(x, s, "mul_scalar");
  require_scalar(s, "mul_scalar");
  const T sv = s.item();
  auto out = copy_value(x);
  for (auto& v : out) v *= sv;
  return x.tape->record(x.shape(), std::move(out), {x.id, s.id}, [](Tape<T>& t, std::size_t self) {
    const auto& node = t.node(self);
    const std::size_t ix = node.parents[0], is = node.parents[1];
    const T sv = t.node(is).value[0];
    if (t.needs_grad(ix)) {
      auto& g = t.grad_of(ix);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.grad[i] * sv;
    }
    if (t.needs_grad(is)) {
      const auto& xv = t.node(ix).value;
      T acc = 0;
      for (std::size_t i = 0; i < xv.size(); ++i) acc += node.grad[i] * xv[i];
      t.grad_of(is)[0] += acc;
    }
  });
}

template <typename T>
Var<T> div_scalar(Var<T> x, Var<T> s) {
  same_tape(x, s, "div_scalar");
  require_scalar(s, "div_scalar");
  const T sv = s.item();
  if (sv == T{0}) throw DegenerateInputError("div_scalar: division by zero");
  auto out = copy_value(x);
  for (auto& v : out) v /= sv;
  return x.tape->record(x.shape(), std::move(out), {x.id, s.id}, [](Tape<T>& t, std::size_t self) {
    const auto& node = t.node(self);
    const std::size_t ix = node.parents[0], is = node.parents[1];
    const T sv = t.node(is).value[0];
    if (t.needs_grad(ix)) {
      auto& g = t.grad_of(ix);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.grad[i] / sv;
    }
    if (t.needs_grad(is)) {
      // d(x/s)/ds = -(x/s)/s
      T acc = 0;
      for (std::size_t i = 0; i < node.value.size(); ++i) acc += node.grad[i] * node.value[i];
      t.grad_of(is)[0] -= acc / sv;
    }
  });
}

template <typename T>
Var<T> exp(Var<T> x) {
  auto out = copy_value(x);
  for (auto& v : out) v = std::exp(v);
  return x.tape->record(x.shape(), std::move(out), {x.id}, [](Tape<T>& t, std::size_t self) {
    const auto& node = t.node(self);
    auto& g = t.grad_of(node.parents[0]);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.grad[i] * node.value[i];
  });
}

template <typename T>
Var<T> softmax(Var<T> x) {
  const auto [rows, cols] = row_view(x.shape());
  auto out = copy_value(x);
  for (std::size_t r = 0; r < rows; ++r) {
    T* row = out.data() + r * cols;
    const T mx = *std::max_element(row, row + cols);
    T total = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      row[c] = std::exp(row[c] - mx);
      total += row[c];
    }
    for (std::size_t c = 0; c < cols; ++c) row[c] /= total;
  }
  return x.tape->record(x.shape(), std::move(out), {x.id},
                        [rows = rows, cols = cols](Tape<T>& t, std::size_t self) {
                          const auto& node = t.node(self);
                          auto& g = t.grad_of(node.parents[0]);
                          for (std::size_t r = 0; r < rows; ++r) {
                            const T* y = node.value.data() + r * cols;
                            const T* gy = node.grad.data() + r * cols;
                            T dot = 0;
                            for (std::size_t c = 0; c < cols; ++c) dot += gy[c] * y[c];
                            for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += y[c] * (gy[c] - dot);
                          }
                        });
}

template <typename T>
Var<T> log_softmax(Var<T> x) {
  const auto [rows, cols] = row_view(x.shape());
  auto out = copy_value(x);
  for (std::size_t r = 0; r < rows; ++r) {
    T* row = out.data() + r * cols;
    const T mx = *std::max_element(row, row + cols);
    T total = 0;
    for (std::size_t c = 0; c < cols; ++c) total += std::exp(row[c] - mx);
    const T lse = mx + std::log(total);
    for (std::size_t c = 0; c < cols; ++c) row[c] -= lse;
  }
  return x.tape->record(x.shape(), std::move(out), {x.id},
                        [rows = rows, cols = cols](Tape<T>& t, std::size_t self) {
                          const auto& node = t.node(self);
                          auto& g = t.grad_of(node.parents[0]);
                          for (std::size_t r = 0; r < rows; ++r) {
                            const T* y = node.value.data() + r * cols;
                            const T* gy = node.grad.data() + r * cols;
                            T total = 0;
                            for (std::size_t c = 0; c < cols; ++c) total += gy[c];
                            for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += gy[c] - std::exp(y[c]) * total;
                          }
                        });
}

template <typename T>
Var<T> l2_normalize(Var<T> x) {
  const auto [rows, cols] = row_view(x.shape());
  auto out = copy_value(x);
  std::vector<T> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    T* row = out.data() + r * cols;
    T ss = 0;
    for (std::size_t c = 0; c < cols; ++c) ss += row[c] * row[c];
    const T norm = std::sqrt(ss);
    if (!(norm > T{0})) throw DegenerateInputError("l2_normalize: row " + std::to_string(r) + " has zero norm");
    for (std::size_t c = 0; c < cols; ++c) row[c] /= norm;
    norms[r] = norm;
  }
  return x.tape->record(
      x.shape(), std::move(out), {x.id},
      [rows = rows, cols = cols](Tape<T>& t, std::size_t self) {
        const auto& node = t.node(self);
        auto& g = t.grad_of(node.parents[0]);
        for (std::size_t r = 0; r < rows; ++r) {
          const T* y = node.value.data() + r * cols;
          const T* gy = node.grad.data() + r * cols;
          T dot = 0;
          for (std::size_t c = 0; c < cols; ++c) dot += gy[c] * y[c];
          const T inv = T{1} / node.aux[r];
          for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += (gy[c] - y[c] * dot) * inv;
        }
      },
      std::move(norms));
}

namespace {

// Normalizes rows of x into `xhat`, returning per-row inverse std.
template <typename T>
std::vector<T> normalize_rows(std::span<const T> x, std::size_t rows, std::size_t cols, T eps, std::vector<T>& xhat) {
  std::vector<T> inv_std(rows);
  xhat.resize(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = x.data() + r * cols;
    T mu = 0;
    for (std::size_t c = 0; c < cols; ++c) mu += row[c];
    mu /= static_cast<T>(cols);
    T var = 0;
    for (std::size_t c = 0; c < cols; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= static_cast<T>(cols);
    const T is = T{1} / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t c = 0; c < cols; ++c) xhat[r * cols + c] = (row[c] - mu) * is;
  }
  return inv_std;
}

// dx for y = (x - mu) * inv_std given dy on xhat.
template <typename T>
void layer_norm_input_grad(const T* xhat, const T* gxhat, T inv_std, std::size_t cols, T* gx) {
  T mean_g = 0, mean_gx = 0;
  for (std::size_t c = 0; c < cols; ++c) {
    mean_g += gxhat[c];
    mean_gx += gxhat[c] * xhat[c];
  }
  mean_g /= static_cast<T>(cols);
  mean_gx /= static_cast<T>(cols);
  for (std::size_t c = 0; c < cols; ++c) gx[c] += inv_std * (gxhat[c] - mean_g - xhat[c] * mean_gx);
}

}  // namespace

template <typename T>
Var<T> layer_norm(Var<T> x, T eps) {
  const auto [rows, cols] = row_view(x.shape());
  std::vector<T> xhat;
  auto inv_std = normalize_rows<T>(x.value(), rows, cols, eps, xhat);
  return x.tape->record(
      x.shape(), std::move(xhat), {x.id},
      [rows = rows, cols = cols](Tape<T>& t, std::size_t self) {
        const auto& node = t.node(self);
        auto& g = t.grad_of(node.parents[0]);
        for (std::size_t r = 0; r < rows; ++r)
          layer_norm_input_grad(node.value.data() + r * cols, node.grad.data() + r * cols, node.aux[r], cols,
                                g.data() + r * cols);
      },
      std::move(inv_std));
}

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps) {
  same_tape(x, gamma, "layer_norm");
  same_tape(x, beta, "layer_norm");
  const auto [rows, cols] = row_view(x.shape());
  if (gamma.shape() != Shape{cols} || beta.shape() != Shape{cols})
    throw DimensionError("layer_norm: affine parameters " + shape_str(gamma.shape()) + "/" +
                         shape_str(beta.shape()) + " do not match " + shape_str(x.shape()));
  std::vector<T> xhat;
  auto inv_std = normalize_rows<T>(x.value(), rows, cols, eps, xhat);
  auto gv = gamma.value();
  auto bv = beta.value();
  std::vector<T> out(xhat.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = xhat[r * cols + c] * gv[c] + bv[c];
  // aux layout: [inv_std (rows) | xhat (rows*cols)]
  std::vector<T> aux = std::move(inv_std);
  aux.insert(aux.end(), xhat.begin(), xhat.end());
  return x.tape->record(
      x.shape(), std::move(out), {x.id, gamma.id, beta.id},
      [rows = rows, cols = cols](Tape<T>& t, std::size_t self) {
        const auto& node = t.node(self);
        const std::size_t ix = node.parents[0], ig = node.parents[1], ib = node.parents[2];
        const T* xhat = node.aux.data() + rows;
        if (t.needs_grad(ig)) {
          auto& gg = t.grad_of(ig);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) gg[c] += node.grad[r * cols + c] * xhat[r * cols + c];
        }
        if (t.needs_grad(ib)) {
          auto& gb = t.grad_of(ib);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) gb[c] += node.grad[r * cols + c];
        }
        if (t.needs_grad(ix)) {
          auto& gx = t.grad_of(ix);
          const auto& gamma = t.node(ig).value;
          std::vector<T> gxhat(cols);
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < cols; ++c) gxhat[c] = node.grad[r * cols + c] * gamma[c];
            layer_norm_input_grad(xhat + r * cols, gxhat.data(), node.aux[r], cols, gx.data() + r * cols);
          }
        }
      },
      std::move(aux));
}

template <typename T>
Var<T> gelu(Var<T> x) {
  constexpr T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  constexpr T inv_sqrt_2pi = std::numbers::inv_sqrtpi_v<T> * inv_sqrt2;
  auto out = copy_value(x);
  for (auto& v : out) v = T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2));
  return x.tape->record(x.shape(), std::move(out), {x.id}, [](Tape<T>& t, std::size_t self) {
    const auto& node = t.node(self);
    const auto& xv = t.node(node.parents[0]).value;
    auto& g = t.grad_of(node.parents[0]);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T v = xv[i];
      const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
      const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
      g[i] += node.grad[i] * (cdf + v * pdf);
    }
  });
}

template <typename T>
Var<T> mean_pool(Var<T> x) {
  const auto& s = x.shape();
  if (s.size() != 2) throw DimensionError("mean_pool: expected rank 2, got " + shape_str(s));
  const std::size_t rows = s[0], cols = s[1];
  std::vector<T> out(cols, T{0});
  const auto& xv = x.tape->node(x.id).value;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c] += xv[r * cols + c];
  for (auto& v : out) v /= static_cast<T>(rows);
  return x.tape->record({cols}, std::move(out), {x.id}, [rows, cols](Tape<T>& t, std::size_t self) {
    const auto& node = t.node(self);
    auto& g = t.grad_of(node.parents[0]);
    const T inv = T{1} / static_cast<T>(rows);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += node.grad[c] * inv;
  });
}

template <typename T>
Var<T> gather_rows(Var<T> x, std::span<const std::size_t> indices) {
  const auto& s = x.shape();
  if (s.size() != 2) throw DimensionError("gather_rows: expected rank 2, got " + shape_str(s));
  if (indices.empty()) throw DimensionError("gather_rows: empty index list");
  const std::size_t rows = s[0], cols = s[1];
  auto xv = x.value();
  std::vector<T> out(indices.size() * cols);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= rows)
      throw DimensionError("gather_rows: index " + std::to_string(indices[i]) + " out of range for " + shape_str(s));
    std::copy_n(xv.data() + indices[i] * cols, cols, out.data() + i * cols);
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return x.tape->record({indices.size(), cols}, std::move(out), {x.id},
                        [idx = std::move(idx), cols](Tape<T>& t, std::size_t self) {
                          const auto& node = t.node(self);
                          auto& g = t.grad_of(node.parents[0]);
                          for (std::size_t i = 0; i < idx.size(); ++i) {
                            T* dst = g.data() + idx[i] * cols;
                            const T* src = node.grad.data() + i * cols;
                            for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
                          }
                        });
}

template <typename T>
Var<T> concat_rows(std::span<const Var<T>> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t cols = parts[0].cols();
  std::vector<T> out;
  std::vector<std::size_t> parents;
  std::size_t rows = 0;
  for (const auto& p : parts) {
    same_tape(parts[0], p, "concat_rows");
    if (p.shape().size() != 2 || p.cols() != cols)
      throw DimensionError("concat_rows: shape " + shape_str(p.shape()) + " incompatible with " +
                           std::to_string(cols) + " columns");
    auto v = p.value();
    out.insert(out.end(), v.begin(), v.end());
    rows += p.rows();
    parents.push_back(p.id);
  }
  return parts[0].tape->record({rows, cols}, std::move(out), std::move(parents), [](Tape<T>& t, std::size_t self) {
    const auto& node = t.node(self);
    std::size_t offset = 0;
    for (auto p : node.parents) {
      const std::size_t n = t.node(p).value.size();
      if (t.needs_grad(p)) {
        auto& g = t.grad_of(p);
        for (std::size_t i = 0; i < n; ++i) g[i] += node.grad[offset + i];
      }
      offset += n;
    }
  });
}

template <typename T>
Var<T> select_per_row(Var<T> x, std::span<const std::size_t> cols_idx) {
  const auto& s = x.shape();
  if (s.size() != 2 || s[0] != cols_idx.size())
    throw DimensionError("select_per_row: shape " + shape_str(s) + " with " + std::to_string(cols_idx.size()) +
                         " indices");
  const std::size_t cols = s[1];
  auto xv = x.value();
  std::vector<T> out(cols_idx.size());
  for (std::size_t r = 0; r < cols_idx.size(); ++r) {
    if (cols_idx[r] >= cols) throw DimensionError("select_per_row: column index out of range");
    out[r] = xv[r * cols + cols_idx[r]];
  }
  std::vector<std::size_t> idx(cols_idx.begin(), cols_idx.end());
  return x.tape->record({idx.size()}, std::move(out), {x.id},
                        [idx = std::move(idx), cols](Tape<T>& t, std::size_t self) {
                          const auto& node = t.node(self);
                          auto& g = t.grad_of(node.parents[0]);
                          for (std::size_t r = 0; r < idx.size(); ++r) g[r * cols + idx[r]] += node.grad[r];
                        });
}

template <typename T>
Var<T> sum(Var<T> x) {
  T total = 0;
  for (auto v : x.value()) total += v;
  return x.tape->record({}, {total}, {x.id}, [](Tape<T>& t, std::size_t self) {
    const T g0 = t.node(self).grad[0];
    auto& g = t.grad_of(t.node(self).parents[0]);
    for (auto& v : g) v += g0;
  });
}

template <typename T>
Var<T> mean(Var<T> x) {
  return scale(sum(x), T{1} / static_cast<T>(x.numel()));
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  return x.tape->record(std::move(shape), copy_value(x), {x.id}, [](Tape<T>& t, std::size_t self) {
    const auto& node = t.node(self);
    auto& g = t.grad_of(node.parents[0]);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.grad[i];
  });
}

template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, std::size_t heads, const AttentionLayout& layout) {
  same_tape(q, k, "attention");
  same_tape(q, v, "attention");
  if (q.shape().size() != 2 || k.shape() != v.shape() || k.shape().size() != 2 || q.cols() != k.cols())
    throw DimensionError("attention: incompatible q/k/v shapes " + shape_str(q.shape()) + ", " +
                         shape_str(k.shape()) + ", " + shape_str(v.shape()));
  const std::size_t width = q.cols();
  if (heads == 0 || width % heads != 0)
    throw DimensionError("attention: width " + std::to_string(width) + " not divisible by " +
                         std::to_string(heads) + " heads");
  const std::size_t segs = layout.segments();
  if (segs == 0 || layout.kv_offsets.size() != layout.q_offsets.size() || layout.q_offsets.back() != q.rows() ||
      layout.kv_offsets.back() != k.rows())
    throw DimensionError("attention: layout does not cover the q/k/v rows");
  const std::size_t hd = width / heads;
  const T inv_scale = T{1} / std::sqrt(static_cast<T>(hd));
  const Eigen::Index W = static_cast<Eigen::Index>(width);
  const Eigen::Index H = static_cast<Eigen::Index>(hd);

  std::size_t prob_size = 0;
  for (std::size_t s = 0; s < segs; ++s) {
    const std::size_t lq = layout.q_offsets[s + 1] - layout.q_offsets[s];
    const std::size_t lk = layout.kv_offsets[s + 1] - layout.kv_offsets[s];
    if (lk == 0 && lq != 0) throw DimensionError("attention: segment with queries but no keys");
    prob_size += heads * lq * lk;
  }

  auto& tape = *q.tape;
  const RowMat<T> Q = load(tape.node(q.id).value, q.rows(), width);
  const RowMat<T> K = load(tape.node(k.id).value, k.rows(), width);
  const RowMat<T> V = load(tape.node(v.id).value, k.rows(), width);
  RowMat<T> O = RowMat<T>::Zero(static_cast<Eigen::Index>(q.rows()), W);
  std::vector<T> probs(prob_size);
  RowMat<T> P;

  std::size_t po = 0;
  for (std::size_t s = 0; s < segs; ++s) {
    const auto q0 = static_cast<Eigen::Index>(layout.q_offsets[s]);
    const auto k0 = static_cast<Eigen::Index>(layout.kv_offsets[s]);
    const auto lq = static_cast<Eigen::Index>(layout.q_offsets[s + 1]) - q0;
    const auto lk = static_cast<Eigen::Index>(layout.kv_offsets[s + 1]) - k0;
    if (lq == 0) continue;
    for (std::size_t h = 0; h < heads; ++h) {
      const auto c0 = static_cast<Eigen::Index>(h * hd);
      P.noalias() = Q.block(q0, c0, lq, H) * K.block(k0, c0, lk, H).transpose();
      for (Eigen::Index r = 0; r < lq; ++r) {
        T* row = P.data() + r * lk;
        T hi = -std::numeric_limits<T>::infinity();
        for (Eigen::Index c = 0; c < lk; ++c) hi = std::max(hi, row[c] *= inv_scale);
        T total = 0;
        for (Eigen::Index c = 0; c < lk; ++c) total += row[c] = std::exp(row[c] - hi);
        for (Eigen::Index c = 0; c < lk; ++c) row[c] /= total;
      }
      O.block(q0, c0, lq, H).noalias() = P * V.block(k0, c0, lk, H);
      std::copy_n(P.data(), P.size(), probs.data() + po);
      po += static_cast<std::size_t>(lq * lk);
    }
  }
  std::vector<T> out(O.data(), O.data() + O.size());

  return tape.record(
      {q.rows(), width}, std::move(out), {q.id, k.id, v.id},
      [layout, heads, hd, width, inv_scale](Tape<T>& t, std::size_t self) {
        const auto& node = t.node(self);
        const std::size_t iq = node.parents[0], ik = node.parents[1], iv = node.parents[2];
        const Eigen::Index W = static_cast<Eigen::Index>(width);
        const Eigen::Index H = static_cast<Eigen::Index>(hd);
        const std::size_t nq = layout.q_offsets.back(), nk = layout.kv_offsets.back();
        const RowMat<T> Q = load(t.node(iq).value, nq, width);
        const RowMat<T> K = load(t.node(ik).value, nk, width);
        const RowMat<T> V = load(t.node(iv).value, nk, width);
        const RowMat<T> G = load(node.grad, nq, width);
        const bool gq = t.needs_grad(iq), gk = t.needs_grad(ik), gv = t.needs_grad(iv);
        RowMat<T> dQ = RowMat<T>::Zero(Q.rows(), W), dK = RowMat<T>::Zero(K.rows(), W),
                  dV = RowMat<T>::Zero(V.rows(), W);
        RowMat<T> P, dP, dS;
        std::size_t po = 0;
        for (std::size_t s = 0; s < layout.segments(); ++s) {
          const auto q0 = static_cast<Eigen::Index>(layout.q_offsets[s]);
          const auto k0 = static_cast<Eigen::Index>(layout.kv_offsets[s]);
          const auto lq = static_cast<Eigen::Index>(layout.q_offsets[s + 1]) - q0;
          const auto lk = static_cast<Eigen::Index>(layout.kv_offsets[s + 1]) - k0;
          if (lq == 0) continue;
          for (std::size_t h = 0; h < heads; ++h) {
            const auto c0 = static_cast<Eigen::Index>(h * hd);
            P = ConstMatMap<T>(node.aux.data() + po, lq, lk);
            auto g = G.block(q0, c0, lq, H);
            if (gv) dV.block(k0, c0, lk, H).noalias() += P.transpose() * g;
            if (gq || gk) {
              dP.noalias() = g * V.block(k0, c0, lk, H).transpose();
              dS = P.array() * (dP.colwise() - (dP.array() * P.array()).rowwise().sum().matrix()).array();
              dS *= inv_scale;
              if (gq) dQ.block(q0, c0, lq, H).noalias() += dS * K.block(k0, c0, lk, H);
              if (gk) dK.block(k0, c0, lk, H).noalias() += dS.transpose() * Q.block(q0, c0, lq, H);
            }
            po += static_cast<std::size_t>(lq * lk);
          }
        }
        if (gq) accumulate(t.grad_of(iq), dQ);
        if (gk) accumulate(t.grad_of(ik), dK);
        if (gv) accumulate(t.grad_of(iv), dV);
      },
      std::move(probs));
}

template <typename T>
std::span<const T> attention_probs(Var<T> attention_output) {
  return attention_output.tape->node(attention_output.id).aux;
}

template <typename T>
bool all_finite(std::span<const T> values) {
  return std::all_of(values.begin(), values.end(), [](T v) { return std::isfinite(v); });
}

#define MV3D_INSTANTIATE_OPS(T)                                                              \
  template Var<T> matmul(Var<T>, Var<T>);                                                    \
  template Var<T> transpose(Var<T>);                                                         \
  template Var<T> add(Var<T>, Var<T>);                                                       \
  template Var<T> sub(Var<T>, Var<T>);                                                       \
  template Var<T> mul(Var<T>, Var<T>);                                                       \
  template Var<T> add_bias(Var<T>, Var<T>);                                                  \
  template Var<T> scale(Var<T>, T);                                                          \
  template Var<T> mul_scalar(Var<T>, Var<T>);                                                \
  template Var<T> div_scalar(Var<T>, Var<T>);                                                \
  template Var<T> exp(Var<T>);                                                               \
  template Var<T> softmax(Var<T>);                                                           \
  template Var<T> log_softmax(Var<T>);                                                       \
  template Var<T> l2_normalize(Var<T>);                                                      \
  template Var<T> layer_norm(Var<T>, T);                                                     \
  template Var<T> layer_norm(Var<T>, Var<T>, Var<T>, T);                                     \
  template Var<T> gelu(Var<T>);                                                              \
  template Var<T> mean_pool(Var<T>);                                                         \
  template Var<T> gather_rows(Var<T>, std::span<const std::size_t>);                         \
  template Var<T> concat_rows(std::span<const Var<T>>);                                      \
  template Var<T> select_per_row(Var<T>, std::span<const std::size_t>);                      \
  template Var<T> sum(Var<T>);                                                               \
  template Var<T> mean(Var<T>);                                                              \
  template Var<T> reshape(Var<T>, Shape);                                                    \
  template Var<T> attention(Var<T>, Var<T>, Var<T>, std::size_t, const AttentionLayout&);    \
  template std::span<const T> attention_probs(Var<T>);                                       \
  template bool all_finite(std::span<const T>);

MV3D_INSTANTIATE_OPS(float)
MV3D_INSTANTIATE_OPS(double)

#undef MV3D_INSTANTIATE_OPS

}  // namespace mv3d
