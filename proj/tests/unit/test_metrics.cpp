#include <gtest/gtest.h>

#include <random>

#include "mv3d/metrics.hpp"
#include "oracles.hpp"

using namespace mv3d;

TEST(Auc, MatchesPairwiseOracle) {
  std::mt19937_64 gen(12);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 2 + gen() % 60;
    std::vector<double> s(n);
    std::vector<std::uint8_t> y(n);
    // Coarse scores so ties are common.
    for (std::size_t i = 0; i < n; ++i) s[i] = static_cast<double>(gen() % 7), y[i] = gen() % 2;
    y[0] = 1;
    y[1] = 0;
    auto a = auc(s, y);
    ASSERT_TRUE(a.has_value());
    EXPECT_NEAR(*a, oracle::pairwise_auc(s, y), 1e-9);
  }
}

TEST(Auc, Examples) {
  std::vector<double> s{0.1, 0.4, 0.35, 0.8};
  std::vector<std::uint8_t> y{0, 0, 1, 1};
  EXPECT_DOUBLE_EQ(*auc(s, y), 0.75);
  std::vector<double> flat(4, 0.5);
  EXPECT_DOUBLE_EQ(*auc(flat, y), 0.5);
  std::vector<std::uint8_t> one_class(4, 1);
  EXPECT_FALSE(auc(s, one_class).has_value());
}

TEST(Confusion, Formulas) {
  std::vector<double> s{0.9, 0.6, 0.2, 0.7, 0.1, 0.5};
  std::vector<std::uint8_t> y{1, 1, 1, 0, 0, 0};
  auto c = confusion(s, y);
  EXPECT_EQ(c.tp, 2u);
  EXPECT_EQ(c.fn, 1u);
  EXPECT_EQ(c.fp, 1u);  // 0.5 is not above the threshold
  EXPECT_EQ(c.tn, 2u);
  EXPECT_DOUBLE_EQ(balanced_accuracy(c), 0.5 * (2.0 / 3 + 2.0 / 3));
  EXPECT_DOUBLE_EQ(precision(c), 2.0 / 3);
  // F1 positive = 2/3, F1 negative = 2/3, supports 3 and 3.
  EXPECT_NEAR(weighted_f1(c), 2.0 / 3, 1e-12);
  ConfusionCounts none{0, 0, 5, 0};
  EXPECT_EQ(precision(none), 0.0);
  EXPECT_EQ(balanced_accuracy(none), 1.0);
}

TEST(Recall, MonotoneInK) {
  std::mt19937_64 gen(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::size_t> ranks(40);
    for (auto& r : ranks) r = gen() % 50;
    double prev = 0;
    for (std::size_t k = 1; k <= 51; ++k) {
      const double r = recall_at_k(ranks, k);
      ASSERT_GE(r, prev);
      prev = r;
    }
    EXPECT_EQ(prev, 1.0);
  }
}

TEST(Rank, TiesGoToLowerIndex) {
  std::vector<double> sims{0.5, 0.9, 0.5, 0.2};
  EXPECT_EQ(rank_of(sims, 1), 0u);
  EXPECT_EQ(rank_of(sims, 0), 1u);
  EXPECT_EQ(rank_of(sims, 2), 2u);
  EXPECT_EQ(rank_of(sims, 3), 3u);
}

TEST(Report, MacroExcludesUndefinedDiseases) {
  std::vector<std::vector<double>> scores{{0.9, 0.1, 0.8}, {0.3, 0.2, 0.1}};
  std::vector<std::vector<std::uint8_t>> labels{{1, 0, 1}, {0, 0, 0}};
  auto r = classification_report("t", {"a", "b"}, scores, labels);
  ASSERT_EQ(r.per_disease.size(), 2u);
  EXPECT_DOUBLE_EQ(*r.per_disease[0].auc, 1.0);
  EXPECT_FALSE(r.per_disease[1].auc.has_value());
  EXPECT_DOUBLE_EQ(*r.macro_auc, 1.0);
  EXPECT_EQ(r.warnings.size(), 1u);
}
