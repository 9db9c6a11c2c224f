#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "mv3d/error.hpp"
#include "mv3d/mi_oracle.hpp"
#include "oracles.hpp"

using namespace mv3d;

TEST(DiscreteJoint, RejectsInvalidTables) {
  EXPECT_THROW(DiscreteJoint({2, 2}, {0.5, 0.5, 0.0, 0.1}), ContractError);
  EXPECT_THROW(DiscreteJoint({2, 2}, {0.5, 0.6, 0.0, -0.1}), ContractError);
  EXPECT_THROW(DiscreteJoint({2, 2}, {0.5, 0.5}), DimensionError);
  EXPECT_NO_THROW(DiscreteJoint({2, 2}, {0.25, 0.25, 0.25, 0.25}));
}

TEST(MutualInformation, Examples) {
  EXPECT_NEAR(brute_force_mi(DiscreteJoint::diagonal(8)), std::log(8.0), 1e-12);
  EXPECT_NEAR(brute_force_mi(DiscreteJoint::diagonal(1)), 0.0, 1e-15);
  std::vector<double> pa{0.2, 0.3, 0.5}, pb{0.6, 0.4};
  EXPECT_NEAR(brute_force_mi(DiscreteJoint::product(pa, pb)), 0.0, 1e-15);
  // Binary symmetric channel with crossover 0.1: log 2 - H(0.1).
  DiscreteJoint bsc({2, 2}, {0.45, 0.05, 0.05, 0.45});
  const double h = -(0.1 * std::log(0.1) + 0.9 * std::log(0.9));
  EXPECT_NEAR(brute_force_mi(bsc), std::log(2.0) - h, 1e-12);
}

TEST(MutualInformation, MatchesReverseOrderSummation) {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t a = 1 + rng.below(7), b = 1 + rng.below(7);
    auto j = DiscreteJoint::random({a, b}, rng, 0.5);
    EXPECT_NEAR(brute_force_mi(j), oracle::mi_reverse(j.probs(), a, b), 1e-12);
  }
}

TEST(MutualInformation, DataProcessingInequality) {
  // Merging symbols of one variable never increases MI.
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t a = 2 + rng.below(5), b = 2 + rng.below(5);
    auto j = DiscreteJoint::random({a, b}, rng);
    std::vector<std::size_t> f(b);
    const std::size_t merged = 1 + rng.below(b);
    for (auto& x : f) x = rng.below(merged);
    EXPECT_LE(brute_force_mi(j.relabel(1, f, merged)), brute_force_mi(j) + 1e-12);
  }
}

TEST(ChainRule, UnifiedDominatesEitherScaleOnRandomJoints) {
  Rng rng(6);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::size_t> alph(4);
    for (auto& x : alph) x = 1 + rng.below(6);
    auto r = chain_rule_check(DiscreteJoint::random(alph, rng));
    EXPECT_TRUE(r.holds);
    EXPECT_GE(r.margin, -1e-9);
    EXPECT_NEAR(r.margin, r.unified - std::max(r.global, r.local), 1e-15);
  }
}

TEST(ChainRule, PairMarginalsAgreeWithGrouping) {
  Rng rng(7);
  auto j = DiscreteJoint::random({2, 3, 2, 2}, rng);
  std::vector<std::size_t> xg{0}, yg{2};
  auto p = j.pair(xg, yg);
  EXPECT_EQ(p.alphabets(), (std::vector<std::size_t>{2, 2}));
  double s = 0;
  for (std::size_t x1 = 0; x1 < 3; ++x1)
    for (std::size_t y1 = 0; y1 < 2; ++y1) {
      std::vector<std::size_t> sym{1, x1, 0, y1};
      s += j.p(sym);
    }
  std::vector<std::size_t> q{1, 0};
  EXPECT_NEAR(p.p(q), s, 1e-15);
}

TEST(InfoNce, BoundNeverExceedsLogNAndTracksIndependence) {
  InfoNceSetup setup;
  setup.train_batches = 1500;
  setup.eval_batches = 500;
  auto dep = infonce_bound_check(DiscreteJoint::diagonal(8), setup);
  EXPECT_LE(dep.bound, std::log(8.0) + 1e-12);
  EXPECT_LE(dep.bound, dep.true_mi + 0.05);
  EXPECT_GT(dep.bound, 1.0);
  std::vector<double> u(8, 1.0 / 8);
  auto ind = infonce_bound_check(DiscreteJoint::product(u, u), setup);
  EXPECT_LT(ind.bound, 0.1);
  EXPECT_NEAR(ind.true_mi, 0.0, 1e-12);
}

TEST(InfoNce, MoreTrainingDoesNotLowerTheBound) {
  InfoNceSetup setup;
  setup.eval_batches = 400;
  setup.train_batches = 20;
  const double early = infonce_bound_check(DiscreteJoint::diagonal(8), setup).bound;
  setup.train_batches = 1000;
  const double late = infonce_bound_check(DiscreteJoint::diagonal(8), setup).bound;
  EXPECT_GT(late, early);
}

TEST(InfoNce, DiagonalCeiling) {
  // n = 1: the single pair is always identified, but log 1 = 0.
  EXPECT_NEAR(diagonal_bound_ceiling(8, 1), 0.0, 1e-15);
  EXPECT_NEAR(diagonal_bound_ceiling(1, 8), 0.0, 1e-15);
  // n = 2, k = 2: log 2 - (1/2) log 2.
  EXPECT_NEAR(diagonal_bound_ceiling(2, 2), 0.5 * std::log(2.0), 1e-12);
  const double c = diagonal_bound_ceiling(8, 8);
  EXPECT_NEAR(c, 1.556, 1e-3);
  EXPECT_LT(c, std::log(8.0) - 0.3);
}
