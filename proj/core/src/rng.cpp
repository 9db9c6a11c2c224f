#include "mv3d/rng.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "mv3d/error.hpp"

namespace mv3d {
namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw ContractError("Rng::below(0)");
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % n;
}

double Rng::normal() {
  if (!std::isnan(spare_)) {
    const double out = spare_;
    spare_ = std::numeric_limits<double>::quiet_NaN();
    return out;
  }
  double u1;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  return radius * std::cos(angle);
}

std::string Rng::state() const {
  std::ostringstream os;
  os << engine_ << ' ';
  if (std::isnan(spare_)) {
    os << "none";
  } else {
    os.precision(17);
    os << std::hexfloat << spare_;
  }
  return os.str();
}

void Rng::set_state(const std::string& s) {
  std::istringstream is(s);
  is >> engine_;
  std::string spare;
  is >> spare;
  if (!is && !is.eof()) throw ConfigError("malformed rng state");
  if (spare == "none" || spare.empty()) {
    spare_ = std::numeric_limits<double>::quiet_NaN();
  } else {
    spare_ = std::strtod(spare.c_str(), nullptr);
  }
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  return splitmix64(splitmix64(splitmix64(seed) ^ (stream * 0xd1b54a32d192ed03ULL)) ^ index);
}

}  // namespace mv3d
