#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "mv3d/text_encoder.hpp"
#include "mv3d/volume.hpp"

namespace mv3d {

// Gaussian blob drawn for one anomaly type, truncated at 3 sigma.
struct BlobSpec {
  double sigma = 1.5;
  double amplitude = 2.0;
  friend bool operator==(const BlobSpec&, const BlobSpec&) = default;
};

struct WorldConfig {
  std::size_t regions = 4;
  Extent3 volume_shape{16, 32, 32};
  double anomaly_prob = 0.3;
  std::vector<std::string> anomaly_types{"opacity", "nodule", "effusion"};
  std::vector<BlobSpec> blobs{{2.0, 1.0}, {1.2, 4.0}, {1.5, 2.0}};
  std::size_t filler_sentence_count = 2;
  double noise_sigma = 0.005;
  double smooth_amplitude = 0.005;
  std::uint64_t rng_seed = 7;

  std::size_t diseases() const { return anomaly_types.size(); }
  // Throws ConfigError, including when a blob does not fit inside a region box.
  void validate() const;
  friend bool operator==(const WorldConfig&, const WorldConfig&) = default;
};

// Axis-aligned half-open box [lo, hi) per axis.
struct Box {
  Extent3 lo{};
  Extent3 hi{};
  bool contains(std::size_t z, std::size_t y, std::size_t x) const {
    return z >= lo[0] && z < hi[0] && y >= lo[1] && y < hi[1] && x >= lo[2] && x < hi[2];
  }
  friend bool operator==(const Box&, const Box&) = default;
};

// Region boxes tile the volume as a rows x cols grid over (H, W).
std::vector<Box> region_boxes(const WorldConfig& cfg);

struct PlantedBlob {
  std::size_t region = 0;
  std::size_t disease = 0;
  std::array<std::size_t, 3> center{};
  std::size_t radius = 0;  // support is the voxel cube center +- radius
};

// labels[r * K + k] = 1 iff an anomaly of type k was planted in region r.
struct PairedSample {
  Volume volume;
  std::vector<RegionMask> masks;
  std::vector<TokenSeq> region_texts;
  TokenSeq report;
  std::vector<TokenSeq> enriched_region_texts;
  TokenSeq enriched_report;
  std::vector<std::uint8_t> labels;
  std::vector<PlantedBlob> blobs;

  std::uint8_t label(std::size_t region, std::size_t disease, std::size_t diseases) const {
    return labels[region * diseases + disease];
  }
  friend bool operator==(const PairedSample& a, const PairedSample& b) {
    return a.volume == b.volume && a.masks == b.masks && a.region_texts == b.region_texts && a.report == b.report &&
           a.enriched_region_texts == b.enriched_region_texts && a.enriched_report == b.enriched_report &&
           a.labels == b.labels;
  }
};

// Closed, sorted word list. Id 0 is [CLS]; words take ids 1..size-1.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> words);

  std::size_t size() const noexcept { return words_.size() + 1; }
  const std::vector<std::string>& words() const noexcept { return words_; }
  std::uint32_t id(const std::string& word) const;
  const std::string& word(std::uint32_t id) const;
  bool contains(const std::string& word) const { return index_.count(word) != 0; }

  // Whitespace split; throws ContractError on an out-of-vocabulary word.
  TokenSeq tokenize(const std::string& sentence) const;
  std::string detokenize(const TokenSeq& tokens) const;

 private:
  std::vector<std::string> words_;
  std::map<std::string, std::uint32_t> index_;
};

// Surface forms of the synthetic radiology language. Every paraphrase maps to
// exactly one canonical presence/absence statement.
class ReportLanguage {
 public:
  explicit ReportLanguage(const WorldConfig& cfg);

  const WorldConfig& config() const { return cfg_; }
  const Vocabulary& vocabulary() const { return vocab_; }

  // Surface templates for (region, disease, presence), each a full sentence.
  const std::vector<std::string>& paraphrases(std::size_t region, std::size_t disease, bool present) const;
  const std::vector<std::string>& fillers() const { return fillers_; }
  std::string canonical_sentence(std::size_t region, std::size_t disease, bool present) const;

  TokenSeq canonical_region_text(std::size_t region, const std::vector<std::uint8_t>& labels) const;
  TokenSeq canonical_report(const std::vector<std::uint8_t>& labels) const;

  // Maps a noisy token sequence to the ordered canonical statements it asserts.
  // Fillers are dropped. Throws UnmappableError listing the first unknown span.
  TokenSeq canonicalize(const TokenSeq& tokens) const;

 private:
  struct Fact {
    std::size_t region;
    std::size_t disease;
    bool present;
    bool filler;
  };

  WorldConfig cfg_;
  std::vector<std::vector<std::string>> sets_;  // index (r * K + k) * 2 + present
  std::vector<std::string> fillers_;
  std::map<std::string, Fact> lookup_;
  Vocabulary vocab_;
};

// Text-in/text-out hook for an external rewriter (an LLM, say). Not used by
// the generator; enrich() runs the rewriter on detokenized noisy text and
// canonicalizes what comes back.
using TextRewriter = std::function<std::string(const std::string&)>;
TokenSeq enrich(const ReportLanguage& language, const TokenSeq& noisy, const TextRewriter& rewriter = {});

// Pure function of (sample_seed, cfg).
PairedSample generate_sample(std::uint64_t sample_seed, const WorldConfig& cfg, const ReportLanguage& language);
// The same sample's volume with no anomaly planted.
Volume background_volume(std::uint64_t sample_seed, const WorldConfig& cfg);

struct Splits {
  std::vector<PairedSample> train;
  std::vector<PairedSample> test;
};

// Train and test draw from disjoint seed streams of cfg.rng_seed. `threads`
// only changes wall time, never the result.
Splits build_splits(const WorldConfig& cfg, std::size_t n_train, std::size_t n_test, std::size_t threads = 1);
std::vector<PairedSample> generate_split(const WorldConfig& cfg, std::uint64_t stream, std::size_t count,
                                         std::size_t threads = 1);

inline constexpr std::uint64_t kTrainStream = 1;
inline constexpr std::uint64_t kTestStream = 2;

}  // namespace mv3d
