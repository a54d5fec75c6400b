#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace ebt {

/// SplitMix64 finalizer; used to derive independent child seeds.
std::uint64_t mix64(std::uint64_t x);

/// Child seed for (root, k1, k2, ...). Order-sensitive and platform-independent.
std::uint64_t derive_seed(std::uint64_t root, std::initializer_list<std::uint64_t> keys);

/// FNV-1a, for folding labels into seed derivations.
std::uint64_t hash_label(std::string_view label);

/// Reproducible generator: std::mt19937_64 (fully specified by the standard)
/// with hand-written distributions, so streams are identical across
/// standard libraries. Children come from derive_seed on the root seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(mix64(seed)) {}

  std::uint64_t seed() const noexcept { return seed_; }
  Rng child(std::uint64_t key) const { return Rng(derive_seed(seed_, {key})); }

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform on (0, 1); never returns 0.
  double uniform_open() { return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53; }
  /// Standard normal via Box-Muller (one variate per call).
  double normal();
  double normal(double mean, double sd) { return mean + sd * normal(); }
  /// Uniform integer in [0, n).
  std::uint64_t index(std::uint64_t n);
  /// ±1 with equal probability.
  double rademacher() { return (engine_() >> 63) ? 1.0 : -1.0; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace ebt
