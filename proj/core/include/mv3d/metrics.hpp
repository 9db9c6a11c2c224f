#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mv3d {

// Probability that a random positive outscores a random negative, ties 1/2.
// Computed from mid-ranks in O(n log n). nullopt when one class is absent.
std::optional<double> auc(std::span<const double> scores, std::span<const std::uint8_t> labels);

struct ConfusionCounts {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::size_t positives() const { return tp + fn; }
  std::size_t negatives() const { return tn + fp; }
  std::size_t total() const { return tp + fp + tn + fn; }
};

// Predicted positive iff score > threshold.
ConfusionCounts confusion(std::span<const double> scores, std::span<const std::uint8_t> labels,
                          double threshold = 0.5);
// Mean of sensitivity and specificity over the classes that occur.
double balanced_accuracy(const ConfusionCounts& c);
// tp / (tp + fp); 0 when nothing is predicted positive.
double precision(const ConfusionCounts& c);
// Per-class F1 averaged with class-support weights.
double weighted_f1(const ConfusionCounts& c);

// 0-based rank of candidate `truth` among `similarities`: candidates scoring
// higher, plus equal-scoring candidates with a lower index.
std::size_t rank_of(std::span<const double> similarities, std::size_t truth);
// Fraction of ranks < k.
double recall_at_k(std::span<const std::size_t> ranks, std::size_t k);

struct DiseaseMetrics {
  std::string disease;
  std::optional<double> auc;
  double balanced_accuracy = 0;
  double precision = 0;
  double weighted_f1 = 0;
  std::size_t positives = 0;
  std::size_t negatives = 0;
};

struct MetricReport {
  std::string task;
  std::vector<DiseaseMetrics> per_disease;
  std::optional<double> macro_auc;
  double balanced_accuracy = 0;  // macro over diseases
  double precision = 0;
  double weighted_f1 = 0;
  std::map<std::size_t, double> recall_at_k;
  std::size_t samples = 0;
  std::size_t skipped = 0;
  std::vector<std::string> warnings;
};

// Fills the per-disease and macro entries from per-disease score/label columns.
MetricReport classification_report(const std::string& task, const std::vector<std::string>& diseases,
                                   const std::vector<std::vector<double>>& scores,
                                   const std::vector<std::vector<std::uint8_t>>& labels);

}  // namespace mv3d
