#include "mv3d/bank.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "mv3d/error.hpp"

namespace mv3d {

namespace {

void check_unit_rows(std::span<const float> rows, std::size_t dim, const char* what) {
  for (std::size_t r = 0; r * dim < rows.size(); ++r) {
    double ss = 0;
    for (std::size_t c = 0; c < dim; ++c) ss += static_cast<double>(rows[r * dim + c]) * rows[r * dim + c];
    if (std::abs(std::sqrt(ss) - 1.0) > 1e-4)
      throw ContractError(std::string(what) + ": row " + std::to_string(r) + " is not unit norm");
  }
}

}  // namespace

SemanticBank::SemanticBank(std::size_t capacity, std::size_t dim, bool full_wrap)
    : capacity_(capacity), dim_(dim), full_wrap_(full_wrap) {
  if (capacity == 0 || dim == 0) throw ConfigError("bank capacity and dim must be positive");
  store_.assign(capacity * dim, 0.0f);
  stamps_.assign(capacity, -1);
}

std::span<const float> SemanticBank::row(std::size_t slot) const {
  if (slot >= capacity_) throw DimensionError("bank slot " + std::to_string(slot) + " out of range");
  return std::span<const float>(store_).subspan(slot * dim_, dim_);
}

void SemanticBank::write_rows(std::span<const float> rows, std::size_t first_row, std::size_t count,
                              std::size_t slot, std::int64_t stamp) {
  std::copy_n(rows.begin() + static_cast<std::ptrdiff_t>(first_row * dim_), count * dim_,
              store_.begin() + static_cast<std::ptrdiff_t>(slot * dim_));
  std::fill_n(stamps_.begin() + static_cast<std::ptrdiff_t>(slot), count, stamp);
  filled_ = std::min(capacity_, std::max(filled_, slot + count));
}

std::size_t SemanticBank::enqueue(std::span<const float> rows, std::int64_t stamp) {
  if (rows.empty() || rows.size() % dim_ != 0)
    throw DimensionError("enqueue: " + std::to_string(rows.size()) + " values do not form rows of width " +
                         std::to_string(dim_));
  check_unit_rows(rows, dim_, "enqueue");
  const std::size_t batch = rows.size() / dim_;
  if (ptr_ + batch >= capacity_) {
    const std::size_t head = capacity_ - ptr_;
    write_rows(rows, 0, head, ptr_, stamp);
    ptr_ = 0;
    if (!full_wrap_) return head;
    std::size_t done = head;
    while (done < batch) {
      const std::size_t n = std::min(batch - done, capacity_);
      write_rows(rows, done, n, 0, stamp);
      done += n;
      ptr_ = n % capacity_;
    }
    return batch;
  }
  write_rows(rows, 0, batch, ptr_, stamp);
  ptr_ += batch;
  return batch;
}

std::vector<double> SemanticBank::similarities(std::span<const float> query) const {
  if (query.size() != dim_)
    throw DimensionError("query of width " + std::to_string(query.size()) + " for bank of width " +
                         std::to_string(dim_));
  if (filled_ == 0) throw EmptyBankError("semantic bank is empty");
  std::vector<double> sims(filled_);
  for (std::size_t s = 0; s < filled_; ++s) {
    const float* r = store_.data() + s * dim_;
    double dot = 0;
    for (std::size_t c = 0; c < dim_; ++c) dot += static_cast<double>(query[c]) * r[c];
    sims[s] = dot;
  }
  return sims;
}

Retrieval SemanticBank::query_top1(std::span<const float> query) const {
  const auto sims = similarities(query);
  std::size_t best = 0;
  for (std::size_t s = 1; s < sims.size(); ++s)
    if (sims[s] > sims[best]) best = s;
  auto r = row(best);
  return {{r.begin(), r.end()}, best, sims[best]};
}

std::vector<Retrieval> SemanticBank::query_topk(std::span<const float> query, std::size_t k) const {
  if (k == 0) throw ContractError("query_topk: k must be at least 1");
  const auto sims = similarities(query);
  std::vector<std::size_t> order(sims.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t take = std::min(k, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                    [&](std::size_t a, std::size_t b) { return sims[a] > sims[b] || (sims[a] == sims[b] && a < b); });
  std::vector<Retrieval> out;
  out.reserve(take);
  for (std::size_t i = 0; i < take; ++i) {
    auto r = row(order[i]);
    out.push_back({{r.begin(), r.end()}, order[i], sims[order[i]]});
  }
  return out;
}

void SemanticBank::restore(std::vector<float> store, std::size_t ptr, std::size_t filled,
                           std::vector<std::int64_t> stamps) {
  if (store.size() != capacity_ * dim_) throw DimensionError("restore: bank storage has the wrong size");
  if (ptr >= capacity_ || filled > capacity_) throw ContractError("restore: ptr/filled out of range");
  store_ = std::move(store);
  ptr_ = ptr;
  filled_ = filled;
  if (stamps.empty()) {
    std::fill(stamps_.begin(), stamps_.end(), -1);
  } else {
    if (stamps.size() != capacity_) throw DimensionError("restore: stamp table has the wrong size");
    stamps_ = std::move(stamps);
  }
}

}  // namespace mv3d
