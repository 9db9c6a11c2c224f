#include "mv3d/eval.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <json.hpp>
#include <map>
#include <sstream>
#include <thread>

#include "mv3d/binary_io.hpp"
#include "mv3d/error.hpp"

namespace mv3d {

namespace {

constexpr std::size_t kChunk = 8;

// Runs fn(begin, end) over contiguous chunks of [0, count). Each index is
// handled by exactly one call, so writes to disjoint slots stay deterministic.
template <typename Fn>
void parallel_chunks(std::size_t count, std::size_t threads, Fn fn) {
  const std::size_t chunks = (count + kChunk - 1) / kChunk;
  threads = std::max<std::size_t>(1, std::min(threads, chunks));
  std::vector<std::exception_ptr> errors(threads);
  auto worker = [&](std::size_t t) {
    try {
      for (std::size_t c = t; c < chunks; c += threads) fn(c * kChunk, std::min(count, (c + 1) * kChunk));
    } catch (...) {
      errors[t] = std::current_exception();
    }
  };
  {
    std::vector<std::jthread> pool;
    for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker, t);
    worker(0);
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

double dot(std::span<const float> a, std::span<const float> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return s;
}

std::vector<float> encode_texts(const Model<float>& model, const std::vector<TokenSeq>& texts) {
  Tape<float> tape(false);
  return model.text.encode(tape, texts).to_tensor().values();
}

void copy_rows(std::span<const float> src, std::size_t src_row, std::vector<float>& dst, std::size_t dst_row,
               std::size_t rows, std::size_t dim) {
  std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(src_row * dim), rows * dim,
              dst.begin() + static_cast<std::ptrdiff_t>(dst_row * dim));
}

std::vector<std::size_t> all_cells(const VisionEncoderConfig& cfg) {
  std::vector<std::size_t> cells(cfg.tokens());
  for (std::size_t c = 0; c < cells.size(); ++c) cells[c] = c;
  return cells;
}

Volume crop_pad(const Volume& volume, const RegionMask& mask, bool& nonempty) {
  Extent3 lo = volume.shape, hi{0, 0, 0};
  nonempty = false;
  for (std::size_t z = 0; z < mask.shape[0]; ++z)
    for (std::size_t y = 0; y < mask.shape[1]; ++y)
      for (std::size_t x = 0; x < mask.shape[2]; ++x) {
        if (!mask.at(z, y, x)) continue;
        nonempty = true;
        const Extent3 p{z, y, x};
        for (int a = 0; a < 3; ++a) {
          lo[a] = std::min(lo[a], p[a]);
          hi[a] = std::max(hi[a], p[a] + 1);
        }
      }
  Volume out(volume.shape);
  if (!nonempty) return out;
  for (std::size_t z = lo[0]; z < hi[0]; ++z)
    for (std::size_t y = lo[1]; y < hi[1]; ++y)
      for (std::size_t x = lo[2]; x < hi[2]; ++x) out.at(z, y, x) = volume.at(z, y, x);
  return out;
}

}  // namespace

std::vector<PromptPair> global_prompts(const ReportLanguage& language) {
  const auto& cfg = language.config();
  const std::size_t K = cfg.diseases();
  const std::vector<std::uint8_t> none(cfg.regions * K, 0);
  std::vector<PromptPair> out;
  for (std::size_t k = 0; k < K; ++k) {
    auto labels = none;
    for (std::size_t r = 0; r < cfg.regions; ++r) labels[r * K + k] = 1;
    out.push_back({cfg.anomaly_types[k], language.canonical_report(labels), language.canonical_report(none)});
  }
  return out;
}

std::vector<PromptPair> local_prompts(const ReportLanguage& language, std::size_t region) {
  const auto& cfg = language.config();
  if (region >= cfg.regions) throw ContractError("local_prompts: region out of range");
  const std::size_t K = cfg.diseases();
  const std::vector<std::uint8_t> none(cfg.regions * K, 0);
  std::vector<PromptPair> out;
  for (std::size_t k = 0; k < K; ++k) {
    auto labels = none;
    labels[region * K + k] = 1;
    out.push_back({cfg.anomaly_types[k], language.canonical_region_text(region, labels),
                   language.canonical_region_text(region, none)});
  }
  return out;
}

double prompt_score(std::span<const float> image, std::span<const float> present, std::span<const float> absent,
                    double tau) {
  const double margin = (dot(image, present) - dot(image, absent)) / tau;
  return 1.0 / (1.0 + std::exp(-margin));
}

TestEmbeddings embed_test_set(const Model<float>& model, std::span<const PairedSample> samples,
                              LocalPathway pathway, std::size_t threads) {
  if (samples.empty()) throw EmptyBatchError("embed_test_set: no samples");
  const auto& vcfg = model.config.vision;
  TestEmbeddings emb;
  emb.samples = samples.size();
  emb.regions = samples.front().masks.size();
  emb.dim = vcfg.proj_dim;
  const std::size_t n = emb.samples, R = emb.regions, D = emb.dim;
  emb.image_global.assign(n * D, 0.0f);
  emb.image_region.assign(n * R * D, 0.0f);
  emb.region_valid.assign(n * R, 0);
  emb.report.assign(n * D, 0.0f);
  emb.region_text.assign(n * R * D, 0.0f);
  const auto every_cell = all_cells(vcfg);

  parallel_chunks(n, threads, [&](std::size_t begin, std::size_t end) {
    const std::size_t m = end - begin;
    std::vector<const Volume*> volumes;
    for (std::size_t i = begin; i < end; ++i) {
      if (samples[i].masks.size() != R) throw DimensionError("embed_test_set: samples disagree on the region count");
      volumes.push_back(&samples[i].volume);
    }
    std::vector<TokenSelection> selections;
    for (std::size_t j = 0; j < m; ++j) selections.push_back({j, every_cell});
    std::vector<Volume> cropped;
    if (pathway == LocalPathway::region_tokens) {
      for (std::size_t j = 0; j < m; ++j)
        for (std::size_t r = 0; r < R; ++r) {
          auto cells = model.vision.active_cells(samples[begin + j].masks[r]);
          if (cells.empty()) continue;
          emb.region_valid[(begin + j) * R + r] = 1;
          selections.push_back({j, std::move(cells)});
        }
    } else {
      for (std::size_t j = 0; j < m; ++j)
        for (std::size_t r = 0; r < R; ++r) {
          bool nonempty = false;
          cropped.push_back(crop_pad(samples[begin + j].volume, samples[begin + j].masks[r], nonempty));
          emb.region_valid[(begin + j) * R + r] = nonempty ? 1 : 0;
        }
      for (std::size_t c = 0; c < cropped.size(); ++c) {
        volumes.push_back(&cropped[c]);
        selections.push_back({m + c, every_cell});
      }
    }
    Tape<float> tape(false);
    auto latent = model.vision.latent(tape, volumes);
    const auto pooled = model.vision.pool(tape, latent, selections).to_tensor();
    copy_rows(pooled.data(), 0, emb.image_global, begin, m, D);
    std::size_t row = m;
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t r = 0; r < R; ++r) {
        const auto slot = (begin + j) * R + r;
        if (pathway == LocalPathway::crop_pad || emb.region_valid[slot]) {
          if (emb.region_valid[slot]) copy_rows(pooled.data(), row, emb.image_region, slot, 1, D);
          ++row;
        }
      }

    std::vector<TokenSeq> texts;
    for (std::size_t i = begin; i < end; ++i) texts.push_back(samples[i].report);
    for (std::size_t i = begin; i < end; ++i)
      for (std::size_t r = 0; r < R; ++r) texts.push_back(samples[i].region_texts[r]);
    const auto t = encode_texts(model, texts);
    copy_rows(t, 0, emb.report, begin, m, D);
    copy_rows(t, m, emb.region_text, begin * R, m * R, D);
  });
  return emb;
}

MetricReport zero_shot_global(const Model<float>& model, const TestEmbeddings& emb,
                              std::span<const PairedSample> samples, const ReportLanguage& language) {
  const auto prompts = global_prompts(language);
  const std::size_t K = prompts.size(), R = emb.regions, D = emb.dim;
  std::vector<TokenSeq> texts;
  for (const auto& p : prompts) texts.insert(texts.end(), {p.present, p.absent});
  const auto t = encode_texts(model, texts);
  const double tau = static_cast<double>(model.temperature.value());
  std::vector<std::vector<double>> scores(K);
  std::vector<std::vector<std::uint8_t>> labels(K);
  std::vector<std::string> names;
  for (std::size_t k = 0; k < K; ++k) {
    names.push_back(prompts[k].disease);
    std::span<const float> present(t.data() + 2 * k * D, D), absent(t.data() + (2 * k + 1) * D, D);
    for (std::size_t i = 0; i < emb.samples; ++i) {
      scores[k].push_back(prompt_score(emb.row(emb.image_global, i), present, absent, tau));
      std::uint8_t any = 0;
      for (std::size_t r = 0; r < R; ++r) any |= samples[i].labels[r * K + k];
      labels[k].push_back(any);
    }
  }
  return classification_report("zero_shot_global", names, scores, labels);
}

MetricReport zero_shot_local(const Model<float>& model, const TestEmbeddings& emb,
                             std::span<const PairedSample> samples, const ReportLanguage& language) {
  const std::size_t R = emb.regions, D = emb.dim, K = language.config().diseases();
  std::vector<TokenSeq> texts;
  for (std::size_t r = 0; r < R; ++r)
    for (const auto& p : local_prompts(language, r)) texts.insert(texts.end(), {p.present, p.absent});
  const auto t = encode_texts(model, texts);
  const double tau = static_cast<double>(model.temperature.value());
  std::vector<std::vector<double>> scores(K);
  std::vector<std::vector<std::uint8_t>> labels(K);
  std::size_t skipped = 0;
  for (std::size_t i = 0; i < emb.samples; ++i)
    for (std::size_t r = 0; r < R; ++r) {
      if (!emb.region_valid[i * R + r]) {
        ++skipped;
        continue;
      }
      for (std::size_t k = 0; k < K; ++k) {
        const std::size_t base = 2 * (r * K + k);
        scores[k].push_back(prompt_score(emb.row(emb.image_region, i * R + r),
                                         std::span<const float>(t.data() + base * D, D),
                                         std::span<const float>(t.data() + (base + 1) * D, D), tau));
        labels[k].push_back(samples[i].labels[r * K + k]);
      }
    }
  if (scores.front().empty()) throw EmptyRegionError("zero_shot_local: no region of the test set is valid");
  auto rep = classification_report("zero_shot_local", language.config().anomaly_types, scores, labels);
  rep.skipped = skipped;
  if (skipped) rep.warnings.push_back(std::to_string(skipped) + " region entries skipped (no active patch cell)");
  return rep;
}

MetricReport report_retrieval(const TestEmbeddings& emb, std::span<const std::size_t> ks) {
  std::vector<std::size_t> ranks;
  std::vector<double> sims(emb.samples);
  for (std::size_t i = 0; i < emb.samples; ++i) {
    for (std::size_t j = 0; j < emb.samples; ++j) sims[j] = dot(emb.row(emb.image_global, i), emb.row(emb.report, j));
    ranks.push_back(rank_of(sims, i));
  }
  MetricReport rep;
  rep.task = "report_retrieval";
  rep.samples = emb.samples;
  for (auto k : ks) rep.recall_at_k[k] = recall_at_k(ranks, k);
  return rep;
}

MetricReport region_grounding(const TestEmbeddings& emb, std::span<const PairedSample> samples,
                              std::span<const std::size_t> ks) {
  const std::size_t R = emb.regions;
  std::map<TokenSeq, std::size_t> pool_index;
  std::vector<std::size_t> pool_rows;  // candidate -> row of region_text
  std::vector<std::size_t> truth(emb.samples * R);
  for (std::size_t i = 0; i < emb.samples; ++i)
    for (std::size_t r = 0; r < R; ++r) {
      auto [it, inserted] = pool_index.emplace(samples[i].region_texts[r], pool_rows.size());
      if (inserted) pool_rows.push_back(i * R + r);
      truth[i * R + r] = it->second;
    }
  std::vector<std::size_t> ranks;
  std::vector<double> sims(pool_rows.size());
  std::size_t skipped = 0;
  for (std::size_t q = 0; q < emb.samples * R; ++q) {
    if (!emb.region_valid[q]) {
      ++skipped;
      continue;
    }
    for (std::size_t c = 0; c < pool_rows.size(); ++c)
      sims[c] = dot(emb.row(emb.image_region, q), emb.row(emb.region_text, pool_rows[c]));
    ranks.push_back(rank_of(sims, truth[q]));
  }
  MetricReport rep;
  rep.task = "region_grounding";
  rep.samples = ranks.size();
  rep.skipped = skipped;
  for (auto k : ks) rep.recall_at_k[k] = recall_at_k(ranks, k);
  return rep;
}

AttentionGrid attention_export(const Model<float>& model, const Volume& volume, const RegionMask* mask) {
  const auto& vcfg = model.config.vision;
  TokenSelection sel{0, mask ? model.vision.active_cells(*mask) : all_cells(vcfg)};
  if (sel.cells.empty())
    throw EmptyRegionError("attention_export: region " + std::to_string(mask->region_id) + " covers no patch cell");
  Tape<float> tape(false);
  const Volume* v[] = {&volume};
  auto latent = model.vision.latent(tape, v);
  Var<float> attn{};
  model.vision.pool(tape, latent, std::span(&sel, 1), &attn);
  const auto probs = attention_probs(attn);
  const std::size_t keys = sel.cells.size() + 1;
  const std::size_t heads = probs.size() / keys;
  AttentionGrid grid{vcfg.grid(), std::vector<float>(vcfg.tokens(), 0.0f)};
  for (std::size_t j = 1; j < keys; ++j) {
    double s = 0;
    for (std::size_t h = 0; h < heads; ++h) s += static_cast<double>(probs[h * keys + j]);
    grid.values[sel.cells[j - 1]] = static_cast<float>(s / static_cast<double>(heads));
  }
  return grid;
}

std::vector<std::uint8_t> encode_attention(const AttentionGrid& grid) {
  if (grid.values.size() != extent_volume(grid.grid)) throw DimensionError("attention grid size mismatch");
  ByteWriter w;
  w.magic("MV3A");
  w.u32(1);
  w.u32(3);
  for (auto e : grid.grid) w.u64(e);
  w.f32s(grid.values);
  return w.take();
}

AttentionGrid decode_attention(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_magic("MV3A", "attention grid");
  const auto at = r.offset();
  if (r.u32() != 1) throw FormatError("unsupported attention grid version", at);
  const auto rank_at = r.offset();
  if (r.u32() != 3) throw FormatError("attention grid must have rank 3", rank_at);
  AttentionGrid grid;
  std::size_t n = 1;
  for (auto& e : grid.grid) {
    const auto eat = r.offset();
    e = r.u64();
    if (e == 0 || e > (1u << 20)) throw FormatError("bad attention grid extent", eat);
    n *= e;
  }
  grid.values = r.f32s(n);
  if (!r.at_end()) throw FormatError("trailing bytes after attention grid", r.offset());
  return grid;
}

std::vector<std::size_t> anomaly_cells(const PairedSample& sample, const VisionEncoderConfig& cfg) {
  const auto g = cfg.grid();
  std::vector<std::size_t> cells;
  for (const auto& b : sample.blobs) {
    const std::size_t cz = b.center[0] / cfg.patch_size[0], cy = b.center[1] / cfg.patch_size[1],
                      cx = b.center[2] / cfg.patch_size[2];
    cells.push_back((cz * g[1] + cy) * g[2] + cx);
  }
  std::sort(cells.begin(), cells.end());
  cells.erase(std::unique(cells.begin(), cells.end()), cells.end());
  return cells;
}

AttentionStat anomaly_attention(const Model<float>& model, std::span<const PairedSample> samples,
                                std::size_t threads) {
  // 0 = not counted, 1 = miss, 2 = hit
  std::vector<std::uint8_t> outcome(samples.size(), 0);
  parallel_chunks(samples.size(), threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto cells = anomaly_cells(samples[i], model.config.vision);
      if (cells.empty() || cells.size() == model.config.vision.tokens()) continue;
      const auto grid = attention_export(model, samples[i].volume);
      double on = 0, off = 0;
      for (std::size_t c = 0; c < grid.values.size(); ++c)
        (std::binary_search(cells.begin(), cells.end(), c) ? on : off) += grid.values[c];
      on /= static_cast<double>(cells.size());
      off /= static_cast<double>(grid.values.size() - cells.size());
      outcome[i] = on > off ? 2 : 1;
    }
  });
  AttentionStat stat;
  for (auto o : outcome) {
    stat.positives += o != 0;
    stat.hits += o == 2;
  }
  return stat;
}

namespace {

std::string fmt_value(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

}  // namespace

std::string metrics_csv(std::span<const MetricReport> reports) {
  std::ostringstream os;
  os << "task,disease,metric,value\n";
  for (const auto& rep : reports) {
    auto row = [&](const std::string& disease, const std::string& metric, double v) {
      os << rep.task << ',' << disease << ',' << metric << ',' << fmt_value(v) << '\n';
    };
    for (const auto& d : rep.per_disease) {
      if (d.auc) row(d.disease, "auc", *d.auc);
      row(d.disease, "balanced_accuracy", d.balanced_accuracy);
      row(d.disease, "precision", d.precision);
      row(d.disease, "weighted_f1", d.weighted_f1);
    }
    if (!rep.per_disease.empty()) {
      if (rep.macro_auc) row("macro", "auc", *rep.macro_auc);
      row("macro", "balanced_accuracy", rep.balanced_accuracy);
      row("macro", "precision", rep.precision);
      row("macro", "weighted_f1", rep.weighted_f1);
    }
    for (const auto& [k, v] : rep.recall_at_k) row("all", "recall@" + std::to_string(k), v);
    row("all", "samples", static_cast<double>(rep.samples));
    row("all", "skipped", static_cast<double>(rep.skipped));
  }
  return os.str();
}

std::string metrics_json(std::span<const MetricReport> reports) {
  using nlohmann::json;
  json out = json::object();
  for (const auto& rep : reports) {
    json j;
    j["samples"] = rep.samples;
    j["skipped"] = rep.skipped;
    if (!rep.per_disease.empty()) {
      j["macro_auc"] = rep.macro_auc ? json(*rep.macro_auc) : json(nullptr);
      j["balanced_accuracy"] = rep.balanced_accuracy;
      j["precision"] = rep.precision;
      j["weighted_f1"] = rep.weighted_f1;
      json per = json::object();
      for (const auto& d : rep.per_disease)
        per[d.disease] = {{"auc", d.auc ? json(*d.auc) : json(nullptr)},
                          {"balanced_accuracy", d.balanced_accuracy},
                          {"precision", d.precision},
                          {"weighted_f1", d.weighted_f1},
                          {"positives", d.positives},
                          {"negatives", d.negatives}};
      j["per_disease"] = per;
    }
    if (!rep.recall_at_k.empty()) {
      json rk = json::object();
      for (const auto& [k, v] : rep.recall_at_k) rk[std::to_string(k)] = v;
      j["recall_at_k"] = rk;
    }
    j["warnings"] = rep.warnings;
    out[rep.task] = j;
  }
  return out.dump(2) + "\n";
}

}  // namespace mv3d
