#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace ltcse {

/// Deterministic 64-bit PRNG (splitmix64). Every random draw in the
/// project goes through this generator so that runs are bitwise
/// reproducible for a fixed seed, independent of the platform's
/// standard-library distributions.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double next_double() {
    return static_cast<double>(next() >> 11) * 0x1.0p-53;
  }

  /// Uniform double in [lo, hi).
  double uniform(double lo, double hi) {
    return lo + (hi - lo) * next_double();
  }

  /// Standard normal via Box-Muller on two splitmix draws.
  double gaussian();

  /// Random sign, +1.0 or -1.0.
  double sign() { return (next() & 1u) ? 1.0 : -1.0; }

  /// Integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n) { return next() % n; }

 private:
  std::uint64_t state_;
};

inline double SplitMix64::gaussian() {
  // Box-Muller; u1 bounded away from zero so log() stays finite.
  double u1 = next_double();
  double u2 = next_double();
  if (u1 < 1e-300) u1 = 1e-300;
  const double two_pi = 6.283185307179586476925286766559;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
}

/// FNV-1a hash of a name, used to derive per-tensor seeds.
inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

/// Seed for one named parameter tensor. Combining the run seed with a
/// stable name hash means adding or removing tensors never perturbs the
/// draws of the others.
inline std::uint64_t tensor_seed(std::uint64_t run_seed, std::string_view name) {
  std::uint64_t z = run_seed ^ (fnv1a64(name) * 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace ltcse
