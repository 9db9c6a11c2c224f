#include "mv3d/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include "mv3d/error.hpp"

namespace mv3d {

std::string to_string(LossMode mode) {
  switch (mode) {
    case LossMode::global_only: return "global_only";
    case LossMode::local_only: return "local_only";
    case LossMode::multiscale: return "multiscale";
    case LossMode::multiscale_semantic: return "multiscale_semantic";
  }
  return "?";
}

LossMode parse_loss_mode(const std::string& name) {
  for (auto m : {LossMode::global_only, LossMode::local_only, LossMode::multiscale, LossMode::multiscale_semantic})
    if (to_string(m) == name) return m;
  throw ConfigError("unknown loss mode '" + name +
                    "' (expected global_only, local_only, multiscale or multiscale_semantic)");
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (steps == 0) throw ConfigError("train.steps must be positive");
  if (warmup_steps >= steps) throw ConfigError("train.warmup_steps must be smaller than train.steps");
  if (!(lr > 0)) throw ConfigError("train.lr must be positive");
  if (weight_decay < 0) throw ConfigError("train.weight_decay must be non-negative");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw ConfigError("train betas must lie in [0, 1)");
  if (!(eps > 0)) throw ConfigError("train.eps must be positive");
  if (bank_capacity == 0) throw ConfigError("train.bank_capacity must be positive");
  if (semantic_weight < 0) throw ConfigError("train.semantic_weight must be non-negative");
}

double lr_at(std::size_t step, const TrainConfig& cfg) {
  if (step >= cfg.steps) throw ContractError("lr_at: step " + std::to_string(step) + " is past the schedule");
  if (step < cfg.warmup_steps) return cfg.lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  const double progress =
      static_cast<double>(step - cfg.warmup_steps) / static_cast<double>(cfg.steps - cfg.warmup_steps);
  return cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

TrainState::TrainState(const ModelConfig& model_cfg, const TrainConfig& train_cfg)
    : model(model_cfg),
      bank(train_cfg.bank_capacity, model_cfg.vision.proj_dim, train_cfg.bank_full_wrap),
      optimizer(AdamWConfig{train_cfg.beta1, train_cfg.beta2, train_cfg.eps, train_cfg.weight_decay}),
      rng(derive_seed(train_cfg.seed, 0x747261696e)) {}

Trainer::Trainer(const ModelConfig& model_cfg, const TrainConfig& train_cfg)
    : cfg_((train_cfg.validate(), train_cfg)), state_(model_cfg, train_cfg) {}

void Trainer::check_compatible(std::span<const PairedSample> data) const {
  if (data.empty()) throw EmptyBatchError("training set is empty");
  const auto& vc = state_.model.config.vision;
  const auto& tc = state_.model.config.text;
  const std::size_t regions = data.front().masks.size();
  auto check_tokens = [&](const TokenSeq& seq, std::size_t i) {
    for (auto id : seq)
      if (id == kClsToken || id >= tc.vocab_size)
        throw ConfigError("sample " + std::to_string(i) + " has token id " + std::to_string(id) +
                          " outside the text encoder vocabulary of " + std::to_string(tc.vocab_size));
  };
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& s = data[i];
    if (s.volume.shape != vc.volume_shape)
      throw ConfigError("sample " + std::to_string(i) + " volume shape does not match the vision encoder");
    if (s.masks.size() != regions || s.region_texts.size() != regions || s.enriched_region_texts.size() != regions)
      throw ConfigError("sample " + std::to_string(i) + " has an inconsistent region count");
    check_tokens(s.report, i);
    check_tokens(s.enriched_report, i);
    for (std::size_t r = 0; r < regions; ++r) {
      if (s.masks[r].shape != vc.volume_shape)
        throw ConfigError("sample " + std::to_string(i) + " mask shape does not match the vision encoder");
      check_tokens(s.region_texts[r], i);
      check_tokens(s.enriched_region_texts[r], i);
    }
  }
}

Var<float> Trainer::forward(Tape<float>& tape, std::span<const PairedSample* const> batch, LossBundle& bundle,
                            std::vector<float>* enriched_global, std::vector<float>* enriched_region,
                            std::vector<std::uint8_t>* region_valid) const {
  if (batch.empty()) throw EmptyBatchError("train_step: empty batch");
  const auto& model = state_.model;
  const std::size_t n = batch.size();
  const std::size_t regions = batch.front()->masks.size();
  const std::size_t dim = model.config.vision.proj_dim;
  const bool need_global = cfg_.mode != LossMode::local_only;
  const bool need_local = cfg_.mode != LossMode::global_only && regions > 0;
  const bool semantic = uses_bank(cfg_.mode);

  std::vector<const Volume*> volumes;
  for (const auto* s : batch) {
    if (s->masks.size() != regions) throw DimensionError("train_step: samples disagree on the region count");
    volumes.push_back(&s->volume);
  }
  std::vector<std::size_t> all_cells(model.config.vision.tokens());
  for (std::size_t c = 0; c < all_cells.size(); ++c) all_cells[c] = c;

  // (1)+(2) one pooling pass for global rows followed by region-major rows.
  // Regions without an active cell get a placeholder row that the losses skip.
  std::vector<TokenSelection> selections;
  std::vector<std::uint8_t> valid;
  if (need_global)
    for (std::size_t i = 0; i < n; ++i) selections.push_back({i, all_cells});
  if (need_local) {
    for (std::size_t r = 0; r < regions; ++r)
      for (std::size_t i = 0; i < n; ++i) {
        auto cells = model.vision.active_cells(batch[i]->masks[r]);
        valid.push_back(cells.empty() ? 0 : 1);
        selections.push_back({i, cells.empty() ? all_cells : std::move(cells)});
      }
    if (std::find(valid.begin(), valid.end(), 1) == valid.end()) {
      if (cfg_.mode == LossMode::local_only) throw EmptyBatchError("train_step: no region in the batch is valid");
    }
  }
  const bool have_local = need_local && std::find(valid.begin(), valid.end(), 1) != valid.end();

  auto latent = model.vision.latent(tape, volumes);
  auto pooled = model.vision.pool(tape, latent, selections);

  std::vector<TokenSeq> texts;
  if (need_global)
    for (const auto* s : batch) texts.push_back(s->report);
  if (need_local)
    for (std::size_t r = 0; r < regions; ++r)
      for (const auto* s : batch) texts.push_back(s->region_texts[r]);
  auto text = model.text.encode(tape, texts);

  auto rows = [](std::size_t first, std::size_t count) {
    std::vector<std::size_t> idx(count);
    for (std::size_t i = 0; i < count; ++i) idx[i] = first + i;
    return idx;
  };
  const std::size_t local_first = need_global ? n : 0;
  auto tau = model.temperature.var(tape);

  bundle = {};
  Var<float> g{}, l{};
  if (need_global) {
    g = global_loss(gather_rows(pooled, rows(0, n)), gather_rows(text, rows(0, n)), tau);
    bundle.global = g.item();
  }
  if (have_local) {
    l = local_loss(gather_rows(pooled, rows(local_first, regions * n)),
                   gather_rows(text, rows(local_first, regions * n)), valid, regions, tau, cfg_.loss);
    bundle.local = l.item();
  }
  if (region_valid) *region_valid = valid;

  if (!semantic) {
    switch (cfg_.mode) {
      case LossMode::global_only:
        bundle.total = bundle.global;
        return g;
      case LossMode::local_only:
        bundle.total = bundle.local;
        return l;
      default:
        if (!have_local) {
          bundle.multiscale = bundle.total = bundle.global;
          return g;
        }
        {
          auto ms = multiscale_loss(g, l);
          bundle.multiscale = bundle.total = ms.item();
          return ms;
        }
    }
  }

  // (3) enriched embeddings are targets only; no gradient reaches the text encoder through them.
  std::vector<TokenSeq> enriched;
  for (const auto* s : batch) enriched.push_back(s->enriched_report);
  for (std::size_t r = 0; r < regions; ++r)
    for (const auto* s : batch) enriched.push_back(s->enriched_region_texts[r]);
  Tape<float> frozen(false);
  const auto enriched_values = model.text.encode(frozen, enriched).to_tensor();

  // (4) nearest bank entry for each enriched embedding.
  const auto& bank = state_.bank;
  if (probe_ && enriched_global) probe_(state_.step, bank.stamps().first(bank.filled()));
  std::vector<float> retrieved(enriched_values.numel());
  for (std::size_t row = 0; row < enriched.size(); ++row) {
    std::span<const float> query = enriched_values.data().subspan(row * dim, dim);
    std::span<const float> target = query;
    Retrieval hit;
    if (!bank.empty()) {
      hit = bank.query_top1(query);
      target = hit.embedding;
    }
    std::copy(target.begin(), target.end(), retrieved.begin() + static_cast<std::ptrdiff_t>(row * dim));
  }
  auto targets = tape.constant({enriched.size(), dim}, std::move(retrieved));

  auto gs = global_semantic_loss(gather_rows(pooled, rows(0, n)), gather_rows(targets, rows(0, n)), tau, cfg_.loss);
  Var<float> ls{};
  if (have_local) {
    ls = local_semantic_loss(gather_rows(pooled, rows(n, regions * n)), gather_rows(targets, rows(n, regions * n)),
                             valid, regions, tau, cfg_.loss);
  } else {
    ls = tape.constant(Shape{}, {0.0f});
    l = tape.constant(Shape{}, {0.0f});
  }
  auto total = combined_loss<float>({g, l, gs, ls}, bundle, static_cast<float>(cfg_.semantic_weight));

  if (enriched_global) {
    const auto& v = enriched_values.values();
    enriched_global->assign(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n * dim));
  }
  if (enriched_region) {
    enriched_region->clear();
    const auto& v = enriched_values.values();
    for (std::size_t k = 0; k < valid.size(); ++k)
      if (valid[k])
        enriched_region->insert(enriched_region->end(), v.begin() + static_cast<std::ptrdiff_t>((n + k) * dim),
                                v.begin() + static_cast<std::ptrdiff_t>((n + k + 1) * dim));
  }
  return total;
}

ParamList<float> Trainer::trainable() {
  ParamList<float> out;
  for (auto& [name, p] : state_.model.parameters())
    if (!(cfg_.freeze_text && name.starts_with("text."))) out.emplace_back(name, p);
  return out;
}

LossBundle Trainer::train_step(std::span<const PairedSample* const> batch) {
  if (state_.step >= cfg_.steps)
    throw ContractError("train_step: schedule of " + std::to_string(cfg_.steps) + " steps is complete");
  Tape<float> tape(true);
  LossBundle bundle;
  std::vector<float> enriched_global, enriched_region;
  auto total = forward(tape, batch, bundle, &enriched_global, &enriched_region, nullptr);

  // (6)
  state_.model.zero_grad();
  tape.backward(total);
  state_.optimizer.step(trainable(), lr_at(state_.step, cfg_));
  state_.model.temperature.clamp();

  // (7) strictly after the update.
  if (uses_bank(cfg_.mode)) {
    const auto stamp = static_cast<std::int64_t>(state_.step);
    state_.bank.enqueue(enriched_global, stamp);
    if (!enriched_region.empty()) state_.bank.enqueue(enriched_region, stamp);
  }
  ++state_.step;
  return bundle;
}

std::vector<std::size_t> Trainer::sample_batch(std::size_t n) {
  if (n == 0) throw EmptyBatchError("sample_batch: no samples");
  const std::size_t b = std::min(cfg_.batch_size, n);
  std::vector<std::size_t> out;
  std::set<std::size_t> seen;
  while (out.size() < b) {
    const auto i = static_cast<std::size_t>(state_.rng.below(n));
    if (seen.insert(i).second) out.push_back(i);
  }
  return out;
}

LossBundle Trainer::step(std::span<const PairedSample> data) {
  std::vector<const PairedSample*> batch;
  for (auto i : sample_batch(data.size())) batch.push_back(&data[i]);
  return train_step(batch);
}

LossBundle Trainer::evaluate(std::span<const PairedSample* const> batch) const {
  Tape<float> tape(false);
  LossBundle bundle;
  forward(tape, batch, bundle, nullptr, nullptr, nullptr);
  return bundle;
}

}  // namespace mv3d
