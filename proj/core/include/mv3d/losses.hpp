#pragma once

#include <cstdint>
#include <span>

#include "mv3d/ops.hpp"

namespace mv3d {

// Learnable softmax temperature tau = exp(log_tau), kept inside [kMin, kMax].
template <typename T>
struct Temperature {
  static constexpr double kMin = 0.01;
  static constexpr double kMax = 1.0;
  static constexpr double kInit = 0.07;

  Tensor<T> log_tau;

  explicit Temperature(double tau = kInit);
  T value() const;
  Var<T> var(Tape<T>& tape) const { return exp(tape.param(log_tau)); }
  void clamp();
};

struct LossOptions {
  // Halve the semantic terms like the global/local terms (ablation only).
  bool symmetric_semantic = false;
  // Let local pairs contrast against other regions' entries too.
  bool cross_region_negatives = false;
};

// Named scalar losses of one batch. multiscale = (global + local) / 2 and
// total = multiscale + global_semantic + local_semantic for the full objective.
struct LossBundle {
  double global = 0;
  double local = 0;
  double multiscale = 0;
  double global_semantic = 0;
  double local_semantic = 0;
  double total = 0;
  friend bool operator==(const LossBundle&, const LossBundle&) = default;
};

// -(1/N) sum_i log softmax_j(<image_i, text_j> / tau)[i]. Rows must be unit norm.
template <typename T>
Var<T> info_nce(Var<T> image, Var<T> text, Var<T> tau);

// (I->T + T->I) / 2.
template <typename T>
Var<T> global_loss(Var<T> image, Var<T> text, Var<T> tau);

// image/text hold R*N rows ordered region-major; valid[r*N + i] marks rows that
// exist. Each region contrasts only among its own valid entries; the sum over
// regions is normalized by the number of valid entries.
template <typename T>
Var<T> local_loss(Var<T> image, Var<T> text, std::span<const std::uint8_t> valid, std::size_t regions, Var<T> tau,
                  const LossOptions& options = {});

template <typename T>
Var<T> multiscale_loss(Var<T> global, Var<T> local);

// I->T + T->I against bank-retrieved targets (no 1/2 unless symmetric_semantic).
template <typename T>
Var<T> global_semantic_loss(Var<T> image, Var<T> retrieved, Var<T> tau, const LossOptions& options = {});
template <typename T>
Var<T> local_semantic_loss(Var<T> image, Var<T> retrieved, std::span<const std::uint8_t> valid, std::size_t regions,
                           Var<T> tau, const LossOptions& options = {});

template <typename T>
struct ObjectiveTerms {
  Var<T> global;
  Var<T> local;
  Var<T> global_semantic;
  Var<T> local_semantic;
};

// total = (global + local) / 2 + semantic_weight * (global_semantic + local_semantic).
template <typename T>
Var<T> combined_loss(const ObjectiveTerms<T>& terms, LossBundle& bundle, T semantic_weight = T{1});

LossBundle combined_loss(double global, double local, double global_semantic, double local_semantic);

}  // namespace mv3d
