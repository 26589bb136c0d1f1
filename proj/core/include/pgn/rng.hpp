#pragma once

#include <cstdint>

namespace pgn {

/// SplitMix64.
///
///   state += 0x9E3779B97F4A7C15
///   z = state
///   z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
///   z = (z ^ (z >> 27)) * 0x94D049BB133111EB
///   return z ^ (z >> 31)
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next();
  /// (next() >> 11) * 2^-53, in [0, 1).
  double uniform01();
  /// 2 * uniform01() - 1, in [-1, 1).
  double uniform_pm1();
  /// lo + (hi - lo) * uniform01().
  double uniform(double lo, double hi);
  /// Integer in [0, n) by multiply-shift on the upper 32 bits; n > 0.
  std::uint32_t below(std::uint32_t n);

 private:
  std::uint64_t state_;
};

/// Stateless 64-bit mix of a key, used for deterministic hashing.
std::uint64_t mix64(std::uint64_t key);

}  // namespace pgn
