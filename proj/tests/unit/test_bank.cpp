#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "mv3d/bank.hpp"
#include "mv3d/error.hpp"
#include "oracles.hpp"

using namespace mv3d;

namespace {

std::vector<std::vector<float>> unit_rows(std::size_t n, std::size_t d, std::mt19937_64& gen) {
  std::normal_distribution<float> nd;
  std::vector<std::vector<float>> rows(n, std::vector<float>(d));
  for (auto& r : rows) {
    double s = 0;
    for (auto& x : r) x = nd(gen), s += double(x) * x;
    for (auto& x : r) x = static_cast<float>(x / std::sqrt(s));
  }
  return rows;
}

std::vector<float> flatten(const std::vector<std::vector<float>>& rows) {
  std::vector<float> out;
  for (const auto& r : rows) out.insert(out.end(), r.begin(), r.end());
  return out;
}

bool same_bits(std::span<const float> a, const std::vector<float>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

}  // namespace

TEST(SemanticBank, TailFillResetsPointerAndDropsRemainder) {
  std::mt19937_64 gen(1);
  SemanticBank bank(8, 3);
  auto first = unit_rows(6, 3, gen);
  EXPECT_EQ(bank.enqueue(flatten(first)), 6u);
  EXPECT_EQ(bank.ptr(), 6u);
  auto second = unit_rows(4, 3, gen);
  EXPECT_EQ(bank.enqueue(flatten(second), 7), 2u);
  EXPECT_EQ(bank.ptr(), 0u);
  EXPECT_EQ(bank.filled(), 8u);
  EXPECT_TRUE(same_bits(bank.row(6), second[0]));
  EXPECT_TRUE(same_bits(bank.row(7), second[1]));
  EXPECT_TRUE(same_bits(bank.row(0), first[0]));
  EXPECT_EQ(bank.stamps()[6], 7);
  EXPECT_EQ(bank.stamps()[5], -1);
}

TEST(SemanticBank, FullWrapWritesRemainderFromZero) {
  std::mt19937_64 gen(2);
  SemanticBank bank(8, 3, true);
  bank.enqueue(flatten(unit_rows(6, 3, gen)));
  auto second = unit_rows(4, 3, gen);
  EXPECT_EQ(bank.enqueue(flatten(second)), 4u);
  EXPECT_EQ(bank.ptr(), 2u);
  EXPECT_TRUE(same_bits(bank.row(0), second[2]));
  EXPECT_TRUE(same_bits(bank.row(1), second[3]));
}

TEST(SemanticBank, MatchesQueueSimulation) {
  std::mt19937_64 gen(3);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t S = 1 + gen() % 40, d = 1 + gen() % 6;
    SemanticBank bank(S, d);
    oracle::Queue queue(S, d);
    const int updates = 1 + static_cast<int>(gen() % 30);
    for (int u = 0; u < updates; ++u) {
      const std::size_t B = 1 + gen() % (S + 4);
      auto rows = unit_rows(B, d, gen);
      bank.enqueue(flatten(rows));
      queue.update(rows);
      ASSERT_EQ(bank.ptr(), queue.ptr) << "S=" << S << " B=" << B;
      ASSERT_EQ(bank.filled(), queue.filled);
      ASSERT_TRUE(same_bits(bank.storage(), flatten(queue.rows)));
    }
  }
}

TEST(SemanticBank, RetrievalMatchesLinearScan) {
  std::mt19937_64 gen(4);
  const std::size_t S = 64, d = 8;
  SemanticBank bank(S, d);
  auto rows = unit_rows(50, d, gen);
  bank.enqueue(flatten(rows));
  for (int q = 0; q < 1000; ++q) {
    auto query = unit_rows(1, d, gen)[0];
    std::vector<std::pair<double, std::size_t>> scan;
    for (std::size_t s = 0; s < bank.filled(); ++s) {
      double dot = 0;
      for (std::size_t c = 0; c < d; ++c) dot += double(query[c]) * rows[s][c];
      scan.emplace_back(-dot, s);
    }
    std::sort(scan.begin(), scan.end());
    auto top = bank.query_top1(query);
    ASSERT_EQ(top.index, scan[0].second);
    EXPECT_NEAR(top.similarity, -scan[0].first, 1e-6);
    EXPECT_TRUE(same_bits(top.embedding, rows[top.index]));
    auto topk = bank.query_topk(query, 5);
    ASSERT_EQ(topk.size(), 5u);
    for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(topk[i].index, scan[i].second);
  }
}

TEST(SemanticBank, TiesGoToLowestSlot) {
  SemanticBank bank(4, 2);
  std::vector<float> rows{1, 0, 0, 1, 1, 0};
  bank.enqueue(rows);
  std::vector<float> q{1, 0};
  EXPECT_EQ(bank.query_top1(q).index, 0u);
  auto topk = bank.query_topk(q, 10);
  ASSERT_EQ(topk.size(), 3u);
  EXPECT_EQ(topk[1].index, 2u);
}

TEST(SemanticBank, Errors) {
  SemanticBank bank(4, 2);
  std::vector<float> q{1, 0};
  EXPECT_THROW(bank.query_top1(q), EmptyBankError);
  std::vector<float> bad{2, 0};
  EXPECT_THROW(bank.enqueue(bad), ContractError);
  std::vector<float> ragged{1, 0, 1};
  EXPECT_THROW(bank.enqueue(ragged), DimensionError);
  EXPECT_THROW(SemanticBank(0, 2), ConfigError);
  EXPECT_THROW(bank.restore(std::vector<float>(8), 4, 0), ContractError);
}
