#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace russ {

/// Seeded stream whose full state is (seed, draws), so it serializes exactly.
///
/// Conversions to doubles are done here rather than with <random>
/// distributions, whose output is implementation-defined.
class DeterministicRng {
 public:
  explicit DeterministicRng(std::uint64_t seed = 0, std::uint64_t draws = 0)
      : seed_(seed), draws_(draws), engine_(seed) {
    engine_.discard(draws);
  }

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t draws() const noexcept { return draws_; }

  std::uint64_t next_u64() {
    ++draws_;
    return engine_();
  }

  /// Uniform in [0, 1).
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

  /// Standard normal via Box-Muller; always consumes two draws.
  double normal() {
    const double u1 = 1.0 - uniform01();
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  friend bool operator==(const DeterministicRng& a, const DeterministicRng& b) {
    return a.seed_ == b.seed_ && a.draws_ == b.draws_;
  }

 private:
  std::uint64_t seed_;
  std::uint64_t draws_;
  std::mt19937_64 engine_;
};

}  // namespace russ
