#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mv3d/rng.hpp"

namespace mv3d {

// Probability table over a tuple of discrete variables, row-major with the
// last variable fastest. Construction checks p >= 0 and total mass 1 +- 1e-12.
class DiscreteJoint {
 public:
  DiscreteJoint(std::vector<std::size_t> alphabets, std::vector<double> probs);

  const std::vector<std::size_t>& alphabets() const { return alphabets_; }
  const std::vector<double>& probs() const { return probs_; }
  std::size_t variables() const { return alphabets_.size(); }
  double p(std::span<const std::size_t> symbols) const;

  // Two-variable joint of the groups (A, B), each flattened in the given order.
  DiscreteJoint pair(std::span<const std::size_t> group_a, std::span<const std::size_t> group_b) const;
  // Applies symbol map `f` to variable `var` (many-to-one merges).
  DiscreteJoint relabel(std::size_t var, std::span<const std::size_t> f, std::size_t new_alphabet) const;

  static DiscreteJoint product(std::span<const double> pa, std::span<const double> pb);
  // Uniform over the diagonal {(k, k)}.
  static DiscreteJoint diagonal(std::size_t k);
  // Flat Dirichlet(alpha) draw over the whole table.
  static DiscreteJoint random(std::vector<std::size_t> alphabets, Rng& rng, double alpha = 1.0);

 private:
  std::vector<std::size_t> alphabets_;
  std::vector<double> probs_;
};

// I(A;B) in nats for a two-variable joint, 0 log 0 = 0.
double brute_force_mi(const DiscreteJoint& joint);

struct ChainRuleResult {
  double unified = 0;  // I((X_G, X_L); (Y_G, Y_L))
  double global = 0;   // I(X_G; Y_G)
  double local = 0;    // I(X_L; Y_L)
  double margin = 0;   // unified - max(global, local)
  bool holds = false;  // margin >= -1e-9
};

// Variables in the order X_G, X_L, Y_G, Y_L.
ChainRuleResult chain_rule_check(const DiscreteJoint& joint);

struct InfoNceSetup {
  std::size_t batch = 8;             // N
  std::size_t train_batches = 10000;
  std::size_t eval_batches = 2000;
  std::size_t dim = 16;
  double lr = 0.05;
  std::uint64_t seed = 0;
};

struct BoundCheck {
  double bound = 0;    // mean over fresh batches of -L + log N
  double true_mi = 0;
  double slack = 0;    // true_mi - bound
  double log_n = 0;
};

// Trains per-symbol embedding tables (cosine critic over a learned temperature)
// with one-directional InfoNCE on batches of N i.i.d. pairs, then estimates
// the bound on fresh batches.
BoundCheck infonce_bound_check(const DiscreteJoint& joint, const InfoNceSetup& setup);

// Best achievable E[-L + log N] for the uniform diagonal joint over k symbols
// with i.i.d. batches of n: repeated symbols in a batch are indistinguishable,
// so the ceiling is log n - E[log(1 + Binomial(n - 1, 1/k))].
double diagonal_bound_ceiling(std::size_t k, std::size_t n);

}  // namespace mv3d
