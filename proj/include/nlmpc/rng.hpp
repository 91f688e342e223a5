#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace nlmpc {

/// Deterministic RNG threaded explicitly through all sampling and initialization.
///
/// Distributions are implemented in-house (std:: distributions are not
/// specified bit-exactly); two runs with the same seed draw identical streams.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t raw() { return eng_(); }

  /// uniform on [0,1)
  double uniform01() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// uniform integer in [0, n)
  std::uint64_t uniform_int(std::uint64_t n) {
    // rejection to avoid modulo bias
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = eng_();
    } while (x >= limit);
    return x % n;
  }

  /// standard normal via Box-Muller (pair cached)
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    // u1 in (0,1] so log is finite
    const double u1 = (static_cast<double>(eng_() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  /// independent child stream for a named pipeline stage
  Rng child(std::string_view tag) const {
    std::uint64_t h = 1469598103934665603ull;  // FNV-1a
    for (char c : tag) {
      h ^= static_cast<std::uint8_t>(c);
      h *= 1099511628211ull;
    }
    return Rng(splitmix64(seed_base() ^ h));
  }

 private:
  std::uint64_t seed_base() const {
    // engine state is opaque; derive children from a copy's next draw
    std::mt19937_64 copy = eng_;
    return copy();
  }

  static std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

  std::mt19937_64 eng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace nlmpc
