#include <benchmark/benchmark.h>

#include <cmath>

#include "mv3d/bank.hpp"
#include "mv3d/config.hpp"
#include "mv3d/corpus.hpp"
#include "mv3d/ops.hpp"
#include "mv3d/rng.hpp"
#include "mv3d/trainer.hpp"

using namespace mv3d;

namespace {

Tensor<float> random_tensor(Shape shape, std::uint64_t seed) {
  Tensor<float> t(shape);
  Rng rng(seed);
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<float>(rng.normal());
  return t;
}

void BM_MatmulForwardBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  auto a = random_tensor({n, n}, 1), b = random_tensor({n, n}, 2);
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  for (auto _ : state) {
    Tape<float> tape;
    auto y = sum(matmul(tape.param(a), tape.param(b)));
    tape.backward(y);
    benchmark::DoNotOptimize(a.grad().data());
  }
  state.SetItemsProcessed(state.iterations() * 3 * static_cast<std::int64_t>(n * n * n));
}
BENCHMARK(BM_MatmulForwardBackward)->Arg(64)->Arg(128)->Arg(256);

void BM_Attention(benchmark::State& state) {
  const auto len = static_cast<std::size_t>(state.range(0));
  const std::size_t seqs = 16, dim = 128, heads = 4;
  auto q = random_tensor({seqs * len, dim}, 3);
  std::vector<std::size_t> lengths(seqs, len);
  const auto layout = AttentionLayout::self(lengths);
  for (auto _ : state) {
    Tape<float> tape(false);
    auto x = tape.constant(q);
    benchmark::DoNotOptimize(attention(x, x, x, heads, layout).value().data());
  }
}
BENCHMARK(BM_Attention)->Arg(17)->Arg(65);

void BM_BankTop1(benchmark::State& state) {
  const std::size_t capacity = 4096, dim = 128;
  SemanticBank bank(capacity, dim);
  auto rows = random_tensor({capacity, dim}, 4);
  std::vector<float> flat(rows.values().begin(), rows.values().end());
  for (std::size_t r = 0; r < capacity; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < dim; ++c) s += double(flat[r * dim + c]) * flat[r * dim + c];
    for (std::size_t c = 0; c < dim; ++c) flat[r * dim + c] = static_cast<float>(flat[r * dim + c] / std::sqrt(s));
  }
  bank.enqueue(flat);
  std::span<const float> query(flat.data(), dim);
  for (auto _ : state) benchmark::DoNotOptimize(bank.query_top1(query).index);
}
BENCHMARK(BM_BankTop1);

void BM_TrainStep(benchmark::State& state) {
  RunConfig cfg;
  cfg.train.mode = static_cast<LossMode>(state.range(0));
  cfg.train.steps = 1000000;
  const auto data = generate_split(cfg.world, kTrainStream, 64);
  Trainer trainer(cfg.model_config(), cfg.train_config());
  for (auto _ : state) benchmark::DoNotOptimize(trainer.step(data).total);
  state.SetLabel(to_string(cfg.train.mode));
}
BENCHMARK(BM_TrainStep)
    ->Arg(static_cast<int>(LossMode::global_only))
    ->Arg(static_cast<int>(LossMode::multiscale_semantic))
    ->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
