#include "mv3d/losses.hpp"

#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "mv3d/error.hpp"

namespace mv3d {

template <typename T>
Temperature<T>::Temperature(double tau) : log_tau(Tensor<T>::scalar(static_cast<T>(std::log(tau)))) {
  log_tau.set_requires_grad(true);
  clamp();
}

template <typename T>
T Temperature<T>::value() const {
  return std::exp(log_tau.item());
}

template <typename T>
void Temperature<T>::clamp() {
  const T lo = static_cast<T>(std::log(kMin)), hi = static_cast<T>(std::log(kMax));
  auto& v = log_tau[0];
  v = std::min(std::max(v, lo), hi);
}

namespace {

template <typename T>
void check_embeddings(Var<T> x, const std::vector<std::size_t>* rows, const char* what) {
  if (x.shape().size() != 2) throw DimensionError(std::string(what) + ": expected [N, d], got " + shape_str(x.shape()));
  const std::size_t d = x.cols();
  auto v = x.value();
  auto check_row = [&](std::size_t r) {
    double ss = 0;
    for (std::size_t c = 0; c < d; ++c) ss += static_cast<double>(v[r * d + c]) * v[r * d + c];
    if (std::abs(std::sqrt(ss) - 1.0) > 1e-3)
      throw ContractError(std::string(what) + ": row " + std::to_string(r) + " is not unit norm");
  };
  if (rows) {
    for (auto r : *rows) check_row(r);
  } else {
    for (std::size_t r = 0; r < x.rows(); ++r) check_row(r);
  }
}

template <typename T>
void check_pair(Var<T> a, Var<T> b, const char* what) {
  if (a.tape != b.tape) throw ContractError(std::string(what) + ": operands on different tapes");
  if (a.shape() != b.shape())
    throw DimensionError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

std::vector<std::size_t> identity_rows(std::size_t n) {
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return rows;
}

// Sum over rows of -log softmax(<a_i, b_j>/tau)[i] in both directions.
template <typename T>
std::pair<Var<T>, Var<T>> nce_sums(Var<T> a, Var<T> b, Var<T> tau) {
  const std::size_t n = a.rows();
  const auto diag = identity_rows(n);
  auto logits = div_scalar(matmul(a, transpose(b)), tau);
  auto a2b = scale(sum(select_per_row(log_softmax(logits), diag)), T{-1});
  auto b2a = scale(sum(select_per_row(log_softmax(transpose(logits)), diag)), T{-1});
  return {a2b, b2a};
}

template <typename T>
std::pair<Var<T>, Var<T>> directional_means(Var<T> image, Var<T> text, Var<T> tau) {
  auto [i2t, t2i] = nce_sums(image, text, tau);
  const T inv = T{1} / static_cast<T>(image.rows());
  return {scale(i2t, inv), scale(t2i, inv)};
}

template <typename T>
std::pair<Var<T>, Var<T>> regional_means(Var<T> image, Var<T> text, std::span<const std::uint8_t> valid,
                                         std::size_t regions, Var<T> tau, const LossOptions& options,
                                         const char* what) {
  check_pair(image, text, what);
  if (regions == 0 || image.rows() % regions != 0 || valid.size() != image.rows())
    throw DimensionError(std::string(what) + ": " + std::to_string(image.rows()) + " rows do not form " +
                         std::to_string(regions) + " regions with " + std::to_string(valid.size()) + " flags");
  const std::size_t n = image.rows() / regions;
  std::vector<std::vector<std::size_t>> groups;
  std::vector<std::size_t> all_valid;
  for (std::size_t r = 0; r < regions; ++r) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < n; ++i)
      if (valid[r * n + i]) rows.push_back(r * n + i);
    all_valid.insert(all_valid.end(), rows.begin(), rows.end());
    if (!rows.empty()) groups.push_back(std::move(rows));
  }
  if (all_valid.empty()) throw EmptyBatchError(std::string(what) + ": no valid region entries");
  check_embeddings(image, &all_valid, what);
  check_embeddings(text, &all_valid, what);
  if (options.cross_region_negatives) groups = {all_valid};

  Var<T> i2t{}, t2i{};
  bool first = true;
  for (const auto& rows : groups) {
    auto [a, b] = nce_sums(gather_rows(image, rows), gather_rows(text, rows), tau);
    if (first) {
      i2t = a;
      t2i = b;
      first = false;
    } else {
      i2t = add(i2t, a);
      t2i = add(t2i, b);
    }
  }
  const T inv = T{1} / static_cast<T>(all_valid.size());
  return {scale(i2t, inv), scale(t2i, inv)};
}

template <typename T>
void check_global(Var<T> image, Var<T> text, const char* what) {
  check_pair(image, text, what);
  if (image.shape().size() != 2 || image.rows() == 0) throw EmptyBatchError(std::string(what) + ": empty batch");
  check_embeddings(image, nullptr, what);
  check_embeddings(text, nullptr, what);
}

}  // namespace

template <typename T>
Var<T> info_nce(Var<T> image, Var<T> text, Var<T> tau) {
  check_global(image, text, "info_nce");
  auto [i2t, t2i] = nce_sums(image, text, tau);
  (void)t2i;
  return scale(i2t, T{1} / static_cast<T>(image.rows()));
}

template <typename T>
Var<T> global_loss(Var<T> image, Var<T> text, Var<T> tau) {
  check_global(image, text, "global_loss");
  auto [i2t, t2i] = directional_means(gather_rows(image, identity_rows(image.rows())),
                                      gather_rows(text, identity_rows(text.rows())), tau);
  return scale(add(i2t, t2i), T(0.5));
}

template <typename T>
Var<T> local_loss(Var<T> image, Var<T> text, std::span<const std::uint8_t> valid, std::size_t regions, Var<T> tau,
                  const LossOptions& options) {
  auto [i2t, t2i] = regional_means(image, text, valid, regions, tau, options, "local_loss");
  return scale(add(i2t, t2i), T(0.5));
}

template <typename T>
Var<T> multiscale_loss(Var<T> global, Var<T> local) {
  return scale(add(global, local), T(0.5));
}

template <typename T>
Var<T> global_semantic_loss(Var<T> image, Var<T> retrieved, Var<T> tau, const LossOptions& options) {
  check_global(image, retrieved, "global_semantic_loss");
  auto [i2t, t2i] = directional_means(gather_rows(image, identity_rows(image.rows())),
                                      gather_rows(retrieved, identity_rows(retrieved.rows())), tau);
  auto total = add(i2t, t2i);
  return options.symmetric_semantic ? scale(total, T(0.5)) : total;
}

template <typename T>
Var<T> local_semantic_loss(Var<T> image, Var<T> retrieved, std::span<const std::uint8_t> valid, std::size_t regions,
                           Var<T> tau, const LossOptions& options) {
  auto [i2t, t2i] = regional_means(image, retrieved, valid, regions, tau, options, "local_semantic_loss");
  auto total = add(i2t, t2i);
  return options.symmetric_semantic ? scale(total, T(0.5)) : total;
}

template <typename T>
Var<T> combined_loss(const ObjectiveTerms<T>& terms, LossBundle& bundle, T semantic_weight) {
  auto ms = multiscale_loss(terms.global, terms.local);
  auto semantic = add(terms.global_semantic, terms.local_semantic);
  auto total = add(ms, scale(semantic, semantic_weight));
  bundle.global = terms.global.item();
  bundle.local = terms.local.item();
  bundle.multiscale = ms.item();
  bundle.global_semantic = terms.global_semantic.item();
  bundle.local_semantic = terms.local_semantic.item();
  bundle.total = total.item();
  return total;
}

LossBundle combined_loss(double global, double local, double global_semantic, double local_semantic) {
  LossBundle b;
  b.global = global;
  b.local = local;
  b.multiscale = 0.5 * (global + local);
  b.global_semantic = global_semantic;
  b.local_semantic = local_semantic;
  b.total = b.multiscale + (global_semantic + local_semantic);
  return b;
}

#define MV3D_INSTANTIATE_LOSSES(T)                                                                           \
  template struct Temperature<T>;                                                                            \
  template Var<T> info_nce(Var<T>, Var<T>, Var<T>);                                                          \
  template Var<T> global_loss(Var<T>, Var<T>, Var<T>);                                                       \
  template Var<T> local_loss(Var<T>, Var<T>, std::span<const std::uint8_t>, std::size_t, Var<T>,            \
                             const LossOptions&);                                                            \
  template Var<T> multiscale_loss(Var<T>, Var<T>);                                                           \
  template Var<T> global_semantic_loss(Var<T>, Var<T>, Var<T>, const LossOptions&);                          \
  template Var<T> local_semantic_loss(Var<T>, Var<T>, std::span<const std::uint8_t>, std::size_t, Var<T>,   \
                                      const LossOptions&);                                                   \
  template Var<T> combined_loss(const ObjectiveTerms<T>&, LossBundle&, T);

MV3D_INSTANTIATE_LOSSES(float)
MV3D_INSTANTIATE_LOSSES(double)

#undef MV3D_INSTANTIATE_LOSSES

}  // namespace mv3d
