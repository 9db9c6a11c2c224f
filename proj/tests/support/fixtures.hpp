#pragma once

#include <random>
#include <vector>

#include "mv3d/config.hpp"
#include "mv3d/corpus.hpp"
#include "mv3d/model.hpp"
#include "mv3d/trainer.hpp"

namespace fixture {

// 8x16x16 volumes, 2x2 regions, 8 patch cells. Small enough for unit tests.
inline mv3d::WorldConfig tiny_world(std::uint64_t seed = 3) {
  mv3d::WorldConfig w;
  w.volume_shape = {8, 16, 16};
  w.blobs = {{1.0, 1.0}, {0.8, 4.0}, {1.0, 2.0}};
  w.rng_seed = seed;
  return w;
}

inline mv3d::ModelConfig tiny_model(std::uint64_t seed = 11) {
  mv3d::ModelConfig m;
  m.vision.volume_shape = {8, 16, 16};
  m.vision.patch_size = {4, 8, 8};
  m.vision.embed_dim = 16;
  m.vision.depth = 2;
  m.vision.heads = 2;
  m.vision.proj_dim = 8;
  m.vision.mlp_hidden = 24;
  m.text.embed_dim = 16;
  m.text.depth = 1;
  m.text.heads = 2;
  m.text.proj_dim = 8;
  m.text.mlp_hidden = 24;
  m.text.vocab_size = 64;
  m.seed = seed;
  return m;
}

inline mv3d::TrainConfig tiny_train(mv3d::LossMode mode = mv3d::LossMode::multiscale_semantic) {
  mv3d::TrainConfig t;
  t.batch_size = 4;
  t.steps = 20;
  t.warmup_steps = 4;
  t.lr = 1e-3;
  t.mode = mode;
  t.bank_capacity = 64;
  t.seed = 5;
  return t;
}

inline std::vector<std::vector<double>> random_unit_rows(std::size_t n, std::size_t d, std::mt19937_64& gen) {
  std::normal_distribution<double> nd;
  std::vector<std::vector<double>> m(n, std::vector<double>(d));
  for (auto& r : m) {
    double s = 0;
    for (auto& x : r) x = nd(gen), s += x * x;
    for (auto& x : r) x /= std::sqrt(s);
  }
  return m;
}

}  // namespace fixture
