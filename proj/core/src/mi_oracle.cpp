#include "mv3d/mi_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mv3d/error.hpp"
#include "mv3d/losses.hpp"
#include "mv3d/optimizer.hpp"

namespace mv3d {

namespace {

std::size_t table_size(const std::vector<std::size_t>& alphabets) {
  std::size_t n = 1;
  for (auto a : alphabets) n *= a;
  return n;
}

std::vector<std::size_t> unravel(std::size_t flat, const std::vector<std::size_t>& alphabets) {
  std::vector<std::size_t> s(alphabets.size());
  for (std::size_t v = alphabets.size(); v-- > 0;) {
    s[v] = flat % alphabets[v];
    flat /= alphabets[v];
  }
  return s;
}

// Samples a flat index from the cumulative table.
std::size_t draw(const std::vector<double>& cdf, Rng& rng) {
  const double u = rng.uniform() * cdf.back();
  auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
  return std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), cdf.size() - 1);
}

}  // namespace

DiscreteJoint::DiscreteJoint(std::vector<std::size_t> alphabets, std::vector<double> probs)
    : alphabets_(std::move(alphabets)), probs_(std::move(probs)) {
  if (alphabets_.empty()) throw ContractError("joint needs at least one variable");
  for (auto a : alphabets_)
    if (a == 0) throw ContractError("alphabet sizes must be positive");
  if (probs_.size() != table_size(alphabets_)) throw DimensionError("joint table size does not match the alphabets");
  double total = 0;
  for (double p : probs_) {
    if (!(p >= 0)) throw ContractError("joint has a negative or NaN entry");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-12)
    throw ContractError("joint mass is " + std::to_string(total) + ", not 1 +- 1e-12");
}

double DiscreteJoint::p(std::span<const std::size_t> symbols) const {
  if (symbols.size() != alphabets_.size()) throw DimensionError("joint lookup with the wrong arity");
  std::size_t flat = 0;
  for (std::size_t v = 0; v < symbols.size(); ++v) {
    if (symbols[v] >= alphabets_[v]) throw DimensionError("symbol out of range");
    flat = flat * alphabets_[v] + symbols[v];
  }
  return probs_[flat];
}

DiscreteJoint DiscreteJoint::pair(std::span<const std::size_t> group_a, std::span<const std::size_t> group_b) const {
  auto group_size = [&](std::span<const std::size_t> g) {
    std::size_t n = 1;
    for (auto v : g) {
      if (v >= alphabets_.size()) throw DimensionError("pair: variable index out of range");
      n *= alphabets_[v];
    }
    return n;
  };
  const std::size_t na = group_size(group_a), nb = group_size(group_b);
  auto flatten = [&](std::span<const std::size_t> g, const std::vector<std::size_t>& s) {
    std::size_t f = 0;
    for (auto v : g) f = f * alphabets_[v] + s[v];
    return f;
  };
  std::vector<double> out(na * nb, 0.0);
  for (std::size_t flat = 0; flat < probs_.size(); ++flat) {
    const auto s = unravel(flat, alphabets_);
    out[flatten(group_a, s) * nb + flatten(group_b, s)] += probs_[flat];
  }
  return DiscreteJoint({na, nb}, std::move(out));
}

DiscreteJoint DiscreteJoint::relabel(std::size_t var, std::span<const std::size_t> f, std::size_t new_alphabet) const {
  if (var >= alphabets_.size() || f.size() != alphabets_[var]) throw DimensionError("relabel: map size mismatch");
  auto alphabets = alphabets_;
  alphabets[var] = new_alphabet;
  std::vector<double> out(table_size(alphabets), 0.0);
  for (std::size_t flat = 0; flat < probs_.size(); ++flat) {
    auto s = unravel(flat, alphabets_);
    if (f[s[var]] >= new_alphabet) throw DimensionError("relabel: target symbol out of range");
    s[var] = f[s[var]];
    std::size_t g = 0;
    for (std::size_t v = 0; v < s.size(); ++v) g = g * alphabets[v] + s[v];
    out[g] += probs_[flat];
  }
  return DiscreteJoint(std::move(alphabets), std::move(out));
}

DiscreteJoint DiscreteJoint::product(std::span<const double> pa, std::span<const double> pb) {
  std::vector<double> out;
  for (double a : pa)
    for (double b : pb) out.push_back(a * b);
  return DiscreteJoint({pa.size(), pb.size()}, std::move(out));
}

DiscreteJoint DiscreteJoint::diagonal(std::size_t k) {
  std::vector<double> out(k * k, 0.0);
  for (std::size_t i = 0; i < k; ++i) out[i * k + i] = 1.0 / static_cast<double>(k);
  return DiscreteJoint({k, k}, std::move(out));
}

DiscreteJoint DiscreteJoint::random(std::vector<std::size_t> alphabets, Rng& rng, double alpha) {
  if (!(alpha > 0)) throw ContractError("Dirichlet concentration must be positive");
  std::mt19937_64 engine(rng.next_u64());
  std::gamma_distribution<double> gamma(alpha, 1.0);
  std::vector<double> w(table_size(alphabets));
  for (auto& x : w) x = gamma(engine);
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  for (auto& x : w) x /= total;
  return DiscreteJoint(std::move(alphabets), std::move(w));
}

double brute_force_mi(const DiscreteJoint& joint) {
  if (joint.variables() != 2) throw ContractError("brute_force_mi needs a two-variable joint");
  const std::size_t na = joint.alphabets()[0], nb = joint.alphabets()[1];
  const auto& p = joint.probs();
  std::vector<double> pa(na, 0.0), pb(nb, 0.0);
  for (std::size_t a = 0; a < na; ++a)
    for (std::size_t b = 0; b < nb; ++b) {
      pa[a] += p[a * nb + b];
      pb[b] += p[a * nb + b];
    }
  double mi = 0;
  for (std::size_t a = 0; a < na; ++a)
    for (std::size_t b = 0; b < nb; ++b) {
      const double pab = p[a * nb + b];
      if (pab > 0) mi += pab * std::log(pab / (pa[a] * pb[b]));
    }
  return mi;
}

ChainRuleResult chain_rule_check(const DiscreteJoint& joint) {
  if (joint.variables() != 4) throw ContractError("chain_rule_check needs (X_G, X_L, Y_G, Y_L)");
  const std::size_t xs[] = {0, 1}, ys[] = {2, 3}, xg[] = {0}, yg[] = {2}, xl[] = {1}, yl[] = {3};
  ChainRuleResult r;
  r.unified = brute_force_mi(joint.pair(xs, ys));
  r.global = brute_force_mi(joint.pair(xg, yg));
  r.local = brute_force_mi(joint.pair(xl, yl));
  r.margin = r.unified - std::max(r.global, r.local);
  r.holds = r.margin >= -1e-9;
  return r;
}

BoundCheck infonce_bound_check(const DiscreteJoint& joint, const InfoNceSetup& setup) {
  if (joint.variables() != 2) throw ContractError("infonce_bound_check needs a two-variable joint");
  if (setup.batch < 2) throw ContractError("infonce_bound_check needs N >= 2");
  const std::size_t na = joint.alphabets()[0], nb = joint.alphabets()[1], n = setup.batch;
  Rng rng(setup.seed);
  Tensor<double> table_a = normal_tensor<double>({na, setup.dim}, 1.0, rng);
  Tensor<double> table_b = normal_tensor<double>({nb, setup.dim}, 1.0, rng);
  Temperature<double> temperature;
  ParamList<double> params{{"a", &table_a}, {"b", &table_b}, {"log_tau", &temperature.log_tau}};
  AdamW<double> opt(AdamWConfig{0.9, 0.999, 1e-8, 0.0});

  std::vector<double> cdf(joint.probs().size());
  std::partial_sum(joint.probs().begin(), joint.probs().end(), cdf.begin());
  auto batch_loss = [&](Tape<double>& tape) {
    std::vector<std::size_t> ia(n), ib(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto flat = draw(cdf, rng);
      ia[i] = flat / nb;
      ib[i] = flat % nb;
    }
    auto a = l2_normalize(gather_rows(tape.param(table_a), ia));
    auto b = l2_normalize(gather_rows(tape.param(table_b), ib));
    return info_nce(a, b, temperature.var(tape));
  };

  for (std::size_t step = 0; step < setup.train_batches; ++step) {
    Tape<double> tape(true);
    auto loss = batch_loss(tape);
    for (auto& [_, p] : params) p->zero_grad();
    tape.backward(loss);
    opt.step(params, setup.lr);
    temperature.clamp();
  }

  BoundCheck out;
  out.log_n = std::log(static_cast<double>(n));
  double total = 0;
  for (std::size_t step = 0; step < setup.eval_batches; ++step) {
    Tape<double> tape(false);
    total += batch_loss(tape).item();
  }
  out.bound = out.log_n - total / static_cast<double>(std::max<std::size_t>(1, setup.eval_batches));
  out.true_mi = brute_force_mi(joint);
  out.slack = out.true_mi - out.bound;
  return out;
}

double diagonal_bound_ceiling(std::size_t k, std::size_t n) {
  if (k == 0 || n == 0) throw ContractError("diagonal_bound_ceiling needs k, n >= 1");
  if (k == 1) return 0.0;
  const double q = 1.0 / static_cast<double>(k);
  double expected_log = 0;
  for (std::size_t j = 0; j < n; ++j) {
    const double log_binom =
        std::lgamma(static_cast<double>(n)) - std::lgamma(static_cast<double>(j + 1)) - std::lgamma(static_cast<double>(n - j));
    const double pj = std::exp(log_binom + static_cast<double>(j) * std::log(q) +
                               static_cast<double>(n - 1 - j) * std::log1p(-q));
    expected_log += pj * std::log(static_cast<double>(1 + j));
  }
  return std::log(static_cast<double>(n)) - expected_log;
}

}  // namespace mv3d
