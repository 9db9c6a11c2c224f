#pragma once

#include <bit>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>

namespace mv3d {

// Seeded generator with platform-independent distributions. All randomness
// in a run flows through instances of this class.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();
  bool bernoulli(double p) { return uniform() < p; }

  template <typename It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) std::swap(first[i - 1], first[below(i)]);
  }

  std::string state() const;
  void set_state(const std::string& s);

  friend bool operator==(const Rng& a, const Rng& b) {
    return a.engine_ == b.engine_ && std::bit_cast<std::uint64_t>(a.spare_) == std::bit_cast<std::uint64_t>(b.spare_);
  }

 private:
  std::mt19937_64 engine_;
  // Second Box-Muller output; NaN when empty.
  double spare_ = std::numeric_limits<double>::quiet_NaN();
};

// Derives an independent stream seed from (seed, stream, index).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index = 0);

}  // namespace mv3d
