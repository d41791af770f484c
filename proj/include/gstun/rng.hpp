#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "gstun/errors.hpp"

namespace gstun {

// Small self-contained generator so that seeded runs reproduce bit-for-bit
// across standard libraries. std::shuffle and std::normal_distribution are
// implementation-defined, which would break the determinism contract.
//
// Core is splitmix64 (Steele/Lea/Flood), good enough for sampling and
// shuffling at this scale.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1), 53-bit resolution.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, bound), rejection sampled to stay unbiased.
  int next_int(int bound) {
    if (bound <= 0) throw ArgumentError("Rng::next_int: bound must be positive");
    const std::uint64_t b = static_cast<std::uint64_t>(bound);
    const std::uint64_t limit = ~0ull - (~0ull % b);
    std::uint64_t r = next_u64();
    while (r >= limit) r = next_u64();
    return static_cast<int>(r % b);
  }

  // Standard normal via Box-Muller. Keeps the spare draw.
  double next_gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u = next_double();
    while (u <= 0.0) u = next_double();  // log(0) guard
    const double v = next_double();
    const double r = std::sqrt(-2.0 * std::log(u));
    const double theta = 6.283185307179586476925286766559 * v;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  // Fisher-Yates with our own bounded draw, deterministic everywhere.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
      std::swap(v[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(next_int(i + 1))]);
    }
  }

 private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace gstun
