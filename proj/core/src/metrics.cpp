#include "mv3d/metrics.hpp"

#include <algorithm>
#include <numeric>

#include "mv3d/error.hpp"

namespace mv3d {

std::optional<double> auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw DimensionError("auc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]]) rank_sum += mid, ++pos;
    i = j;
  }
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) return std::nullopt;
  const double p = static_cast<double>(pos);
  return (rank_sum - p * (p + 1) / 2) / (p * static_cast<double>(neg));
}

ConfusionCounts confusion(std::span<const double> scores, std::span<const std::uint8_t> labels, double threshold) {
  if (scores.size() != labels.size()) throw DimensionError("confusion: scores and labels differ in length");
  ConfusionCounts c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] > threshold;
    if (labels[i]) (pred ? c.tp : c.fn)++;
    else (pred ? c.fp : c.tn)++;
  }
  return c;
}

double balanced_accuracy(const ConfusionCounts& c) {
  double sum = 0;
  int classes = 0;
  if (c.positives()) sum += static_cast<double>(c.tp) / static_cast<double>(c.positives()), ++classes;
  if (c.negatives()) sum += static_cast<double>(c.tn) / static_cast<double>(c.negatives()), ++classes;
  return classes ? sum / classes : 0.0;
}

double precision(const ConfusionCounts& c) {
  return c.tp + c.fp ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp) : 0.0;
}

double weighted_f1(const ConfusionCounts& c) {
  auto f1 = [](std::size_t tp, std::size_t fp, std::size_t fn) {
    const auto denom = 2 * tp + fp + fn;
    return denom ? 2.0 * static_cast<double>(tp) / static_cast<double>(denom) : 0.0;
  };
  if (c.total() == 0) return 0.0;
  const double f_pos = f1(c.tp, c.fp, c.fn);
  const double f_neg = f1(c.tn, c.fn, c.fp);
  return (f_pos * static_cast<double>(c.positives()) + f_neg * static_cast<double>(c.negatives())) /
         static_cast<double>(c.total());
}

std::size_t rank_of(std::span<const double> similarities, std::size_t truth) {
  if (truth >= similarities.size()) throw DimensionError("rank_of: truth index out of range");
  const double s = similarities[truth];
  std::size_t rank = 0;
  for (std::size_t j = 0; j < similarities.size(); ++j)
    if (similarities[j] > s || (similarities[j] == s && j < truth)) ++rank;
  return rank;
}

double recall_at_k(std::span<const std::size_t> ranks, std::size_t k) {
  if (ranks.empty()) return 0.0;
  const auto hits = std::count_if(ranks.begin(), ranks.end(), [k](std::size_t r) { return r < k; });
  return static_cast<double>(hits) / static_cast<double>(ranks.size());
}

MetricReport classification_report(const std::string& task, const std::vector<std::string>& diseases,
                                   const std::vector<std::vector<double>>& scores,
                                   const std::vector<std::vector<std::uint8_t>>& labels) {
  if (scores.size() != diseases.size() || labels.size() != diseases.size())
    throw DimensionError("classification_report: one score and label column per disease expected");
  MetricReport rep;
  rep.task = task;
  rep.samples = diseases.empty() ? 0 : scores.front().size();
  double auc_sum = 0;
  std::size_t auc_count = 0;
  for (std::size_t k = 0; k < diseases.size(); ++k) {
    DiseaseMetrics m;
    m.disease = diseases[k];
    m.auc = auc(scores[k], labels[k]);
    const auto c = confusion(scores[k], labels[k]);
    m.balanced_accuracy = balanced_accuracy(c);
    m.precision = precision(c);
    m.weighted_f1 = weighted_f1(c);
    m.positives = c.positives();
    m.negatives = c.negatives();
    if (m.auc) {
      auc_sum += *m.auc;
      ++auc_count;
    } else {
      rep.warnings.push_back("AUC undefined for '" + m.disease + "' (single-class labels); excluded from macro AUC");
    }
    rep.balanced_accuracy += m.balanced_accuracy;
    rep.precision += m.precision;
    rep.weighted_f1 += m.weighted_f1;
    rep.per_disease.push_back(std::move(m));
  }
  if (auc_count) rep.macro_auc = auc_sum / static_cast<double>(auc_count);
  if (!diseases.empty()) {
    const auto k = static_cast<double>(diseases.size());
    rep.balanced_accuracy /= k;
    rep.precision /= k;
    rep.weighted_f1 /= k;
  }
  return rep;
}

}  // namespace mv3d
