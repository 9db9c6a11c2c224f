#include "mv3d/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numbers>
#include <set>
#include <sstream>
#include <thread>

#include "mv3d/error.hpp"
#include "mv3d/rng.hpp"

namespace mv3d {

namespace {

const std::vector<std::string> kPresentTemplates = {
    "slight {d} seen in region {r}.",
    "there is {d} in region {r}.",
    "region {r} shows {d}.",
    "{d} noted within region {r}.",
};

const std::vector<std::string> kAbsentTemplates = {
    "no {d} in region {r}.",
    "region {r} is free of {d}.",
    "{d} is not seen in region {r}.",
    "without {d} in region {r}.",
};

const std::vector<std::string> kFillers = {
    "the study is of diagnostic quality.",
    "comparison with prior imaging is not available.",
    "the patient was scanned in supine position.",
    "findings were discussed with the referring team.",
};

std::string substitute(std::string text, const std::string& key, const std::string& value) {
  for (auto pos = text.find(key); pos != std::string::npos; pos = text.find(key, pos + value.size()))
    text.replace(pos, key.size(), value);
  return text;
}

std::vector<std::string> split_words(const std::string& s) {
  std::istringstream is(s);
  std::vector<std::string> out;
  for (std::string w; is >> w;) out.push_back(w);
  return out;
}

std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

std::pair<std::size_t, std::size_t> region_grid(std::size_t regions) {
  std::size_t rows = 1;
  for (std::size_t d = 1; d * d <= regions; ++d)
    if (regions % d == 0) rows = d;
  return {rows, regions / rows};
}

std::size_t blob_radius(const BlobSpec& b) { return static_cast<std::size_t>(std::ceil(3.0 * b.sigma)); }

}  // namespace

void WorldConfig::validate() const {
  if (regions == 0) throw ConfigError("world.regions must be positive");
  if (anomaly_types.empty()) throw ConfigError("world.anomaly_types must not be empty");
  if (blobs.size() != anomaly_types.size())
    throw ConfigError("world.blobs needs one entry per anomaly type (" + std::to_string(anomaly_types.size()) + ")");
  if (!(anomaly_prob >= 0.0 && anomaly_prob <= 1.0)) throw ConfigError("world.anomaly_prob must lie in [0, 1]");
  if (noise_sigma < 0 || smooth_amplitude < 0) throw ConfigError("world noise levels must be non-negative");
  for (const auto& name : anomaly_types)
    if (name.empty() || name.find(' ') != std::string::npos)
      throw ConfigError("anomaly type names must be single words, got '" + name + "'");
  for (auto e : volume_shape)
    if (e == 0) throw ConfigError("world.volume_shape extents must be positive");
  const auto [rows, cols] = region_grid(regions);
  if (volume_shape[1] % rows != 0 || volume_shape[2] % cols != 0)
    throw ConfigError("volume (H, W) is not divisible by the " + std::to_string(rows) + "x" + std::to_string(cols) +
                      " region grid");
  const Extent3 box{volume_shape[0], volume_shape[1] / rows, volume_shape[2] / cols};
  for (std::size_t k = 0; k < blobs.size(); ++k) {
    if (!(blobs[k].sigma > 0)) throw ConfigError("blob sigma must be positive");
    const std::size_t support = 2 * blob_radius(blobs[k]) + 1;
    for (auto e : box)
      if (e < support)
        throw ConfigError("region box extent " + std::to_string(e) + " is smaller than the support (" +
                          std::to_string(support) + ") of '" + anomaly_types[k] + "' blobs");
  }
}

std::vector<Box> region_boxes(const WorldConfig& cfg) {
  const auto [rows, cols] = region_grid(cfg.regions);
  const std::size_t bh = cfg.volume_shape[1] / rows, bw = cfg.volume_shape[2] / cols;
  std::vector<Box> boxes;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      boxes.push_back({{0, r * bh, c * bw}, {cfg.volume_shape[0], (r + 1) * bh, (c + 1) * bw}});
  return boxes;
}

// ---------------------------------------------------------------------------

Vocabulary::Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {
  std::sort(words_.begin(), words_.end());
  words_.erase(std::unique(words_.begin(), words_.end()), words_.end());
  for (std::size_t i = 0; i < words_.size(); ++i) index_.emplace(words_[i], static_cast<std::uint32_t>(i + 1));
}

std::uint32_t Vocabulary::id(const std::string& word) const {
  auto it = index_.find(word);
  if (it == index_.end()) throw ContractError("out-of-vocabulary word '" + word + "'");
  return it->second;
}

const std::string& Vocabulary::word(std::uint32_t id) const {
  if (id == 0 || id > words_.size()) throw ContractError("token id " + std::to_string(id) + " has no word");
  return words_[id - 1];
}

TokenSeq Vocabulary::tokenize(const std::string& sentence) const {
  TokenSeq out;
  for (const auto& w : split_words(sentence)) out.push_back(id(w));
  return out;
}

std::string Vocabulary::detokenize(const TokenSeq& tokens) const {
  std::string out;
  for (auto t : tokens) {
    if (!out.empty()) out += ' ';
    out += word(t);
  }
  return out;
}

// ---------------------------------------------------------------------------

ReportLanguage::ReportLanguage(const WorldConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const std::size_t K = cfg_.diseases();
  std::vector<std::string> words;
  auto add_words = [&](const std::string& s) {
    for (auto& w : split_words(s)) words.push_back(std::move(w));
  };
  auto register_sentence = [&](const std::string& s, Fact fact) {
    auto [it, inserted] = lookup_.emplace(s, fact);
    if (!inserted) throw ConfigError("ambiguous sentence '" + s + "' maps to two statements");
    add_words(s);
  };

  sets_.resize(cfg_.regions * K * 2);
  for (std::size_t r = 0; r < cfg_.regions; ++r) {
    for (std::size_t k = 0; k < K; ++k) {
      for (int present = 0; present < 2; ++present) {
        auto& set = sets_[(r * K + k) * 2 + present];
        for (const auto& tpl : present ? kPresentTemplates : kAbsentTemplates) {
          auto s = substitute(substitute(tpl, "{d}", cfg_.anomaly_types[k]), "{r}", std::to_string(r));
          register_sentence(s, {r, k, present != 0, false});
          set.push_back(std::move(s));
        }
        register_sentence(canonical_sentence(r, k, present != 0), {r, k, present != 0, false});
      }
    }
  }
  fillers_ = kFillers;
  for (const auto& f : fillers_) register_sentence(f, {0, 0, false, true});
  // Sentences may arrive without their final period.
  for (std::size_t r = 0; r < cfg_.regions; ++r) words.push_back(std::to_string(r));
  for (const auto& d : cfg_.anomaly_types) words.push_back(d);
  vocab_ = Vocabulary(std::move(words));
}

const std::vector<std::string>& ReportLanguage::paraphrases(std::size_t region, std::size_t disease,
                                                            bool present) const {
  if (region >= cfg_.regions || disease >= cfg_.diseases()) throw ContractError("paraphrases: index out of range");
  return sets_[(region * cfg_.diseases() + disease) * 2 + (present ? 1 : 0)];
}

std::string ReportLanguage::canonical_sentence(std::size_t region, std::size_t disease, bool present) const {
  return "Region " + std::to_string(region) + ": " + cfg_.anomaly_types.at(disease) +
         (present ? " present." : " absent.");
}

TokenSeq ReportLanguage::canonical_region_text(std::size_t region, const std::vector<std::uint8_t>& labels) const {
  const std::size_t K = cfg_.diseases();
  TokenSeq out;
  for (std::size_t k = 0; k < K; ++k) {
    auto t = vocab_.tokenize(canonical_sentence(region, k, labels.at(region * K + k) != 0));
    out.insert(out.end(), t.begin(), t.end());
  }
  return out;
}

TokenSeq ReportLanguage::canonical_report(const std::vector<std::uint8_t>& labels) const {
  TokenSeq out;
  for (std::size_t r = 0; r < cfg_.regions; ++r) {
    auto t = canonical_region_text(r, labels);
    out.insert(out.end(), t.begin(), t.end());
  }
  return out;
}

TokenSeq ReportLanguage::canonicalize(const TokenSeq& tokens) const {
  std::vector<std::string> words;
  words.reserve(tokens.size());
  for (auto t : tokens) words.push_back(vocab_.word(t));

  // (region, disease) -> present
  std::map<std::pair<std::size_t, std::size_t>, bool> facts;
  std::vector<std::string> sentence;
  auto flush = [&]() {
    if (sentence.empty()) return;
    auto text = join(sentence);
    if (text.back() != '.') text += '.';
    auto it = lookup_.find(text);
    if (it == lookup_.end()) throw UnmappableError(join(sentence));
    const Fact& f = it->second;
    if (!f.filler) {
      auto [pos, inserted] = facts.emplace(std::make_pair(f.region, f.disease), f.present);
      if (!inserted && pos->second != f.present) throw UnmappableError(join(sentence) + " (contradicts earlier statement)");
    }
    sentence.clear();
  };
  for (auto& w : words) {
    const bool ends = w.back() == '.';
    sentence.push_back(std::move(w));
    if (ends) flush();
  }
  flush();

  TokenSeq out;
  for (const auto& [key, present] : facts) {
    auto t = vocab_.tokenize(canonical_sentence(key.first, key.second, present));
    out.insert(out.end(), t.begin(), t.end());
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

struct Plan {
  std::vector<std::uint8_t> labels;
  std::vector<PlantedBlob> blobs;
};

Plan draw_plan(Rng& rng, const WorldConfig& cfg, const std::vector<Box>& boxes) {
  const std::size_t K = cfg.diseases();
  Plan plan;
  plan.labels.assign(cfg.regions * K, 0);
  for (std::size_t r = 0; r < cfg.regions; ++r)
    for (std::size_t k = 0; k < K; ++k) plan.labels[r * K + k] = rng.bernoulli(cfg.anomaly_prob) ? 1 : 0;
  for (std::size_t r = 0; r < cfg.regions; ++r) {
    for (std::size_t k = 0; k < K; ++k) {
      if (!plan.labels[r * K + k]) continue;
      PlantedBlob blob{r, k, {}, blob_radius(cfg.blobs[k])};
      for (int a = 0; a < 3; ++a) {
        const std::size_t lo = boxes[r].lo[a] + blob.radius;
        const std::size_t hi = boxes[r].hi[a] - 1 - blob.radius;  // inclusive
        blob.center[a] = lo + rng.below(hi - lo + 1);
      }
      plan.blobs.push_back(blob);
    }
  }
  return plan;
}

Volume render_volume(Rng& rng, const WorldConfig& cfg, const Plan& plan, bool plant) {
  const auto& s = cfg.volume_shape;
  Volume vol(s);
  constexpr int kModes = 4;
  struct Mode {
    double fz, fy, fx, phase, weight;
  };
  std::vector<Mode> modes;
  for (int m = 0; m < kModes; ++m)
    modes.push_back({rng.uniform(0.0, 2.0), rng.uniform(0.0, 2.0), rng.uniform(0.0, 2.0),
                     rng.uniform(0.0, 2.0 * std::numbers::pi), rng.normal()});
  const double mode_scale = cfg.smooth_amplitude / std::sqrt(static_cast<double>(kModes));
  for (std::size_t z = 0; z < s[0]; ++z)
    for (std::size_t y = 0; y < s[1]; ++y)
      for (std::size_t x = 0; x < s[2]; ++x) {
        double v = 0;
        for (const auto& m : modes)
          v += m.weight * std::cos(2.0 * std::numbers::pi *
                                       (m.fz * static_cast<double>(z) / static_cast<double>(s[0]) +
                                        m.fy * static_cast<double>(y) / static_cast<double>(s[1]) +
                                        m.fx * static_cast<double>(x) / static_cast<double>(s[2])) +
                                   m.phase);
        v = v * mode_scale + cfg.noise_sigma * rng.normal();
        vol.at(z, y, x) = static_cast<float>(v);
      }
  if (!plant) return vol;
  for (const auto& blob : plan.blobs) {
    const auto& spec = cfg.blobs[blob.disease];
    const double cutoff = 3.0 * spec.sigma;
    const auto rad = blob.radius;
    for (std::size_t z = blob.center[0] - rad; z <= blob.center[0] + rad; ++z)
      for (std::size_t y = blob.center[1] - rad; y <= blob.center[1] + rad; ++y)
        for (std::size_t x = blob.center[2] - rad; x <= blob.center[2] + rad; ++x) {
          const double dz = static_cast<double>(z) - static_cast<double>(blob.center[0]);
          const double dy = static_cast<double>(y) - static_cast<double>(blob.center[1]);
          const double dx = static_cast<double>(x) - static_cast<double>(blob.center[2]);
          const double d2 = dz * dz + dy * dy + dx * dx;
          if (d2 > cutoff * cutoff) continue;
          vol.at(z, y, x) += static_cast<float>(spec.amplitude * std::exp(-d2 / (2.0 * spec.sigma * spec.sigma)));
        }
  }
  return vol;
}

}  // namespace

TokenSeq enrich(const ReportLanguage& language, const TokenSeq& noisy, const TextRewriter& rewriter) {
  if (!rewriter) return language.canonicalize(noisy);
  const auto& vocab = language.vocabulary();
  return language.canonicalize(vocab.tokenize(rewriter(vocab.detokenize(noisy))));
}

PairedSample generate_sample(std::uint64_t sample_seed, const WorldConfig& cfg, const ReportLanguage& language) {
  if (!(language.config() == cfg)) throw ConfigError("report language was built for a different world config");
  const std::size_t K = cfg.diseases();
  const auto boxes = region_boxes(cfg);
  Rng rng(sample_seed);
  auto plan = draw_plan(rng, cfg, boxes);

  PairedSample sample;
  sample.volume = render_volume(rng, cfg, plan, true);
  for (std::size_t r = 0; r < cfg.regions; ++r) {
    RegionMask mask(static_cast<int>(r), cfg.volume_shape);
    for (std::size_t z = boxes[r].lo[0]; z < boxes[r].hi[0]; ++z)
      for (std::size_t y = boxes[r].lo[1]; y < boxes[r].hi[1]; ++y)
        for (std::size_t x = boxes[r].lo[2]; x < boxes[r].hi[2]; ++x) mask.at(z, y, x) = 1;
    sample.masks.push_back(std::move(mask));
  }

  const auto& vocab = language.vocabulary();
  std::vector<std::vector<std::string>> region_sentences(cfg.regions);
  for (std::size_t r = 0; r < cfg.regions; ++r) {
    for (std::size_t k = 0; k < K; ++k) {
      const auto& set = language.paraphrases(r, k, plan.labels[r * K + k] != 0);
      region_sentences[r].push_back(set[rng.below(set.size())]);
    }
    rng.shuffle(region_sentences[r].begin(), region_sentences[r].end());
    TokenSeq text;
    for (const auto& s : region_sentences[r]) {
      auto t = vocab.tokenize(s);
      text.insert(text.end(), t.begin(), t.end());
    }
    sample.region_texts.push_back(std::move(text));
    sample.enriched_region_texts.push_back(language.canonical_region_text(r, plan.labels));
  }

  std::vector<std::size_t> order(cfg.regions);
  for (std::size_t r = 0; r < order.size(); ++r) order[r] = r;
  rng.shuffle(order.begin(), order.end());
  std::vector<std::string> report;
  for (auto r : order) report.insert(report.end(), region_sentences[r].begin(), region_sentences[r].end());
  for (std::size_t f = 0; f < cfg.filler_sentence_count; ++f) {
    const auto& filler = language.fillers()[rng.below(language.fillers().size())];
    const auto pos = rng.below(report.size() + 1);
    report.insert(report.begin() + static_cast<std::ptrdiff_t>(pos), filler);
  }
  for (const auto& s : report) {
    auto t = vocab.tokenize(s);
    sample.report.insert(sample.report.end(), t.begin(), t.end());
  }
  sample.enriched_report = language.canonical_report(plan.labels);
  sample.labels = std::move(plan.labels);
  sample.blobs = std::move(plan.blobs);
  return sample;
}

Volume background_volume(std::uint64_t sample_seed, const WorldConfig& cfg) {
  cfg.validate();
  const auto boxes = region_boxes(cfg);
  Rng rng(sample_seed);
  auto plan = draw_plan(rng, cfg, boxes);
  return render_volume(rng, cfg, plan, false);
}

std::vector<PairedSample> generate_split(const WorldConfig& cfg, std::uint64_t stream, std::size_t count,
                                         std::size_t threads) {
  const ReportLanguage language(cfg);
  std::vector<PairedSample> out(count);
  threads = std::max<std::size_t>(1, std::min(threads, count));
  std::vector<std::exception_ptr> errors(threads);
  auto work = [&](std::size_t first) {
    try {
      for (std::size_t i = first; i < count; i += threads)
        out[i] = generate_sample(derive_seed(cfg.rng_seed, stream, i), cfg, language);
    } catch (...) {
      errors[first] = std::current_exception();
    }
  };
  {
    std::vector<std::jthread> pool;
    for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(work, t);
    work(0);
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

Splits build_splits(const WorldConfig& cfg, std::size_t n_train, std::size_t n_test, std::size_t threads) {
  if (n_train == 0 || n_test == 0) throw ConfigError("build_splits: split sizes must be at least 1");
  cfg.validate();
  return {generate_split(cfg, kTrainStream, n_train, threads), generate_split(cfg, kTestStream, n_test, threads)};
}

}  // namespace mv3d
