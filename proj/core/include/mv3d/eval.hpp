#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mv3d/corpus.hpp"
#include "mv3d/metrics.hpp"
#include "mv3d/model.hpp"

namespace mv3d {

struct PromptPair {
  std::string disease;
  TokenSeq present;
  TokenSeq absent;
};

// Whole-volume prompts: the canonical report with the disease present in every
// region versus the all-absent canonical report.
std::vector<PromptPair> global_prompts(const ReportLanguage& language);
// Region prompts: the canonical region text with only the disease present
// versus the all-absent region text.
std::vector<PromptPair> local_prompts(const ReportLanguage& language, std::size_t region);

// Probability of "present" under a softmax over the two prompt similarities / tau.
double prompt_score(std::span<const float> image, std::span<const float> present, std::span<const float> absent,
                    double tau);

enum class LocalPathway {
  region_tokens,  // encode_region: the model's own mask-pooled pathway
  crop_pad,       // baseline emulation: keep the mask's bounding box, zero the rest, encode globally
};

// All embeddings a test set needs, computed once. Rows are unit norm.
struct TestEmbeddings {
  std::size_t samples = 0;
  std::size_t regions = 0;
  std::size_t dim = 0;
  std::vector<float> image_global;    // [samples, dim]
  std::vector<float> image_region;    // [samples * regions, dim], sample-major; zero rows when invalid
  std::vector<std::uint8_t> region_valid;
  std::vector<float> report;          // [samples, dim]
  std::vector<float> region_text;     // [samples * regions, dim]

  std::span<const float> row(const std::vector<float>& table, std::size_t i) const {
    return std::span<const float>(table).subspan(i * dim, dim);
  }
};

// Read-only over the model. `threads` changes wall time only.
TestEmbeddings embed_test_set(const Model<float>& model, std::span<const PairedSample> samples,
                              LocalPathway pathway = LocalPathway::region_tokens, std::size_t threads = 1);

MetricReport zero_shot_global(const Model<float>& model, const TestEmbeddings& emb,
                              std::span<const PairedSample> samples, const ReportLanguage& language);
// Regions without an active patch cell are skipped and counted in `skipped`.
MetricReport zero_shot_local(const Model<float>& model, const TestEmbeddings& emb,
                             std::span<const PairedSample> samples, const ReportLanguage& language);
// Ranks every report for each volume; ties go to the lower index.
MetricReport report_retrieval(const TestEmbeddings& emb, std::span<const std::size_t> ks);
// Candidate pool = the distinct region descriptions of the test set; a query
// hits when its own description ranks within K.
MetricReport region_grounding(const TestEmbeddings& emb, std::span<const PairedSample> samples,
                              std::span<const std::size_t> ks);

struct AttentionGrid {
  Extent3 grid{};
  std::vector<float> values;  // z-major, one entry per patch cell
  friend bool operator==(const AttentionGrid&, const AttentionGrid&) = default;
};

// Final-block [CLS] attention to each patch token, averaged over heads. With a
// mask, only the region's active cells take part and the rest of the grid is 0.
// The [CLS] self-weight is not part of the grid, so entries sum to at most 1.
AttentionGrid attention_export(const Model<float>& model, const Volume& volume, const RegionMask* mask = nullptr);

// "MV3A", u32 version, u32 rank (3), u64 extents, f32 values.
std::vector<std::uint8_t> encode_attention(const AttentionGrid& grid);
AttentionGrid decode_attention(std::span<const std::uint8_t> bytes);

// Cells containing a planted blob center.
std::vector<std::size_t> anomaly_cells(const PairedSample& sample, const VisionEncoderConfig& cfg);

struct AttentionStat {
  std::size_t positives = 0;  // samples with an anomaly and at least one anomaly-free cell
  std::size_t hits = 0;       // of those, mean attention on anomaly cells > mean elsewhere
  double fraction() const { return positives ? static_cast<double>(hits) / static_cast<double>(positives) : 0.0; }
};
AttentionStat anomaly_attention(const Model<float>& model, std::span<const PairedSample> samples,
                                std::size_t threads = 1);

// One row per task x disease x metric: task,disease,metric,value.
std::string metrics_csv(std::span<const MetricReport> reports);
std::string metrics_json(std::span<const MetricReport> reports);

}  // namespace mv3d
