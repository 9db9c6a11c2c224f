#pragma once

// Reference implementations written directly from the formulas, in plain
// loops over std::vector. They share no code with the library.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

namespace oracle {

using Mat = std::vector<std::vector<double>>;

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline Mat normalize_rows(Mat m) {
  for (auto& r : m) {
    const double n = std::sqrt(dot(r, r));
    for (auto& x : r) x /= n;
  }
  return m;
}

// -sum_i log( exp(<a_i,b_i>/tau) / sum_j exp(<a_i,b_j>/tau) ), not averaged.
inline double nce_sum(const Mat& a, const Mat& b, double tau) {
  double total = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double denom = 0;
    for (std::size_t j = 0; j < b.size(); ++j) denom += std::exp(dot(a[i], b[j]) / tau);
    total -= std::log(std::exp(dot(a[i], b[i]) / tau) / denom);
  }
  return total;
}

// (1/N) sum over rows of a against all rows of b.
inline double info_nce(const Mat& a, const Mat& b, double tau) {
  return nce_sum(a, b, tau) / static_cast<double>(a.size());
}

inline double global_loss(const Mat& v, const Mat& t, double tau) {
  return 0.5 * (info_nce(v, t, tau) + info_nce(t, v, tau));
}

// Rows are region-major (r * N + i). Each region contrasts its own valid rows
// (all valid rows together with cross_region); both directions are summed
// over regions and divided by the number of valid rows. `half` selects the
// averaged form used by the plain local loss.
inline double regional(const Mat& v, const Mat& t, const std::vector<std::uint8_t>& valid, std::size_t regions,
                       double tau, bool half, bool cross_region) {
  const std::size_t n = v.size() / regions;
  double total = 0;
  std::size_t count = 0;
  for (std::size_t r = 0; r < (cross_region ? 1 : regions); ++r) {
    Mat a, b;
    for (std::size_t rr = 0; rr < regions; ++rr) {
      if (!cross_region && rr != r) continue;
      for (std::size_t i = 0; i < n; ++i)
        if (valid[rr * n + i]) a.push_back(v[rr * n + i]), b.push_back(t[rr * n + i]);
    }
    if (a.empty()) continue;
    total += (half ? 0.5 : 1.0) * (nce_sum(a, b, tau) + nce_sum(b, a, tau));
    count += a.size();
  }
  return total / static_cast<double>(count);
}

inline double global_semantic_loss(const Mat& v, const Mat& retrieved, double tau) {
  return info_nce(v, retrieved, tau) + info_nce(retrieved, v, tau);
}

inline double local_loss(const Mat& v, const Mat& t, const std::vector<std::uint8_t>& valid, std::size_t regions,
                         double tau, bool cross_region = false) {
  return regional(v, t, valid, regions, tau, true, cross_region);
}

inline double local_semantic_loss(const Mat& v, const Mat& retrieved, const std::vector<std::uint8_t>& valid,
                                  std::size_t regions, double tau) {
  return regional(v, retrieved, valid, regions, tau, false, false);
}

inline double combined(double g, double l, double gs, double ls) { return 0.5 * (g + l) + gs + ls; }

// Reference queue update, one statement per step of the update rule.
struct Queue {
  std::size_t S, dim;
  std::vector<std::vector<float>> rows;
  std::size_t ptr = 0;
  std::size_t filled = 0;

  Queue(std::size_t s, std::size_t d) : S(s), dim(d), rows(s, std::vector<float>(d, 0.0f)) {}

  void update(const std::vector<std::vector<float>>& t) {
    const std::size_t B = t.size();
    if (ptr + B >= S) {
      for (std::size_t k = 0; k < S - ptr; ++k) rows[ptr + k] = t[k];
      filled = S;
      ptr = 0;
    } else {
      for (std::size_t k = 0; k < B; ++k) rows[ptr + k] = t[k];
      filled = std::max(filled, ptr + B);
      ptr = ptr + B;
    }
  }
};

// Pairwise-comparison AUC: fraction of (pos, neg) pairs ordered correctly, ties 1/2.
inline double pairwise_auc(const std::vector<double>& s, const std::vector<std::uint8_t>& y) {
  double good = 0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] && !y[j]) {
        ++pairs;
        good += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      }
  return good / static_cast<double>(pairs);
}

// I(A;B) summed in reverse order over the table.
inline double mi_reverse(const std::vector<double>& p, std::size_t na, std::size_t nb) {
  std::vector<double> pa(na, 0), pb(nb, 0);
  for (std::size_t k = p.size(); k-- > 0;) pa[k / nb] += p[k], pb[k % nb] += p[k];
  double mi = 0;
  for (std::size_t k = p.size(); k-- > 0;)
    if (p[k] > 0) mi += p[k] * (std::log(p[k]) - std::log(pa[k / nb]) - std::log(pb[k % nb]));
  return mi;
}

}  // namespace oracle
