#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mv3d/bank.hpp"
#include "mv3d/corpus.hpp"
#include "mv3d/model.hpp"
#include "mv3d/optimizer.hpp"

namespace mv3d {

enum class LossMode { global_only, local_only, multiscale, multiscale_semantic };

std::string to_string(LossMode mode);
// Throws ConfigError on an unknown name.
LossMode parse_loss_mode(const std::string& name);
inline bool uses_bank(LossMode mode) { return mode == LossMode::multiscale_semantic; }

struct TrainConfig {
  std::size_t batch_size = 16;
  std::size_t steps = 2000;
  double lr = 5e-5;
  std::size_t warmup_steps = 200;
  double weight_decay = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  LossMode mode = LossMode::multiscale_semantic;
  std::size_t bank_capacity = 4096;
  bool bank_full_wrap = false;
  double semantic_weight = 1.0;
  LossOptions loss;
  bool freeze_text = false;
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const TrainConfig& a, const TrainConfig& b) {
    return a.batch_size == b.batch_size && a.steps == b.steps && a.lr == b.lr && a.warmup_steps == b.warmup_steps &&
           a.weight_decay == b.weight_decay && a.beta1 == b.beta1 && a.beta2 == b.beta2 && a.eps == b.eps &&
           a.mode == b.mode && a.bank_capacity == b.bank_capacity && a.bank_full_wrap == b.bank_full_wrap &&
           a.semantic_weight == b.semantic_weight && a.loss.symmetric_semantic == b.loss.symmetric_semantic &&
           a.loss.cross_region_negatives == b.loss.cross_region_negatives && a.freeze_text == b.freeze_text &&
           a.seed == b.seed;
  }
};

// Linear warmup to cfg.lr over warmup_steps, then cosine decay to 0 at cfg.steps.
double lr_at(std::size_t step, const TrainConfig& cfg);

// Everything a checkpoint has to capture for a bitwise resume.
struct TrainState {
  Model<float> model;
  SemanticBank bank;
  AdamW<float> optimizer;
  Rng rng;
  std::size_t step = 0;

  TrainState(const ModelConfig& model_cfg, const TrainConfig& train_cfg);
};

// Observes the bank queries of a step: (step, slot stamps that were visible).
using QueryProbe = std::function<void(std::size_t step, std::span<const std::int64_t> stamps)>;

class Trainer {
 public:
  Trainer(const ModelConfig& model_cfg, const TrainConfig& train_cfg);

  const TrainConfig& config() const { return cfg_; }
  TrainState& state() { return state_; }
  const TrainState& state() const { return state_; }

  // Checks that the samples fit the model (volume shape, vocabulary, masks).
  void check_compatible(std::span<const PairedSample> data) const;

  // One optimization step on the given samples, in order:
  //  1. global image/report embeddings    2. region image/text embeddings
  //  3. enriched text embeddings (no grad) 4. bank top-1 for each (self before the bank has entries)
  //  5. losses for the configured mode    6. backward + AdamW + temperature clamp
  //  7. enqueue enriched report rows, then enriched region rows.
  LossBundle train_step(std::span<const PairedSample* const> batch);

  // Draws batch_size distinct indices from [0, n) with the state's rng.
  std::vector<std::size_t> sample_batch(std::size_t n);
  // sample_batch + train_step.
  LossBundle step(std::span<const PairedSample> data);

  // Loss of the current parameters on a batch without updating anything.
  LossBundle evaluate(std::span<const PairedSample* const> batch) const;

  void set_query_probe(QueryProbe probe) { probe_ = std::move(probe); }

 private:
  Var<float> forward(Tape<float>& tape, std::span<const PairedSample* const> batch, LossBundle& bundle,
                     std::vector<float>* enriched_global, std::vector<float>* enriched_region,
                     std::vector<std::uint8_t>* region_valid) const;
  ParamList<float> trainable();

  TrainConfig cfg_;
  TrainState state_;
  QueryProbe probe_;
};

}  // namespace mv3d
