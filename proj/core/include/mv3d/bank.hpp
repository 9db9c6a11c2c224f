#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace mv3d {

struct Retrieval {
  std::vector<float> embedding;
  std::size_t index = 0;
  double similarity = 0;
};

// Fixed-capacity FIFO of unit-norm text embeddings with cosine retrieval.
//
// enqueue() follows the queue update rule exactly: when ptr + B >= S the tail
// slots ptr..S-1 receive the first S - ptr rows, ptr resets to 0 and the
// remaining rows are dropped. With full_wrap the remainder is written from
// slot 0 instead.
class SemanticBank {
 public:
  SemanticBank(std::size_t capacity, std::size_t dim, bool full_wrap = false);

  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t ptr() const noexcept { return ptr_; }
  std::size_t filled() const noexcept { return filled_; }
  bool full_wrap() const noexcept { return full_wrap_; }
  bool empty() const noexcept { return filled_ == 0; }

  std::span<const float> row(std::size_t slot) const;
  std::span<const float> storage() const noexcept { return store_; }
  // Stamp passed with the last write to each slot, -1 if never written.
  std::span<const std::int64_t> stamps() const noexcept { return stamps_; }

  // rows is B x dim, row-major. Returns the number of rows written.
  std::size_t enqueue(std::span<const float> rows, std::int64_t stamp = -1);

  // Highest cosine over slots [0, filled); ties go to the lowest slot.
  // Throws EmptyBankError when nothing has been written.
  Retrieval query_top1(std::span<const float> query) const;
  // Top min(k, filled) by similarity, descending, ties by slot.
  std::vector<Retrieval> query_topk(std::span<const float> query, std::size_t k) const;

  // Replaces the whole state (checkpoint restore). Validates invariants.
  void restore(std::vector<float> store, std::size_t ptr, std::size_t filled, std::vector<std::int64_t> stamps = {});

  friend bool operator==(const SemanticBank&, const SemanticBank&) = default;

 private:
  void write_rows(std::span<const float> rows, std::size_t first_row, std::size_t count, std::size_t slot,
                  std::int64_t stamp);
  std::vector<double> similarities(std::span<const float> query) const;

  std::size_t capacity_;
  std::size_t dim_;
  bool full_wrap_;
  std::vector<float> store_;
  std::vector<std::int64_t> stamps_;
  std::size_t ptr_ = 0;
  std::size_t filled_ = 0;
};

}  // namespace mv3d
