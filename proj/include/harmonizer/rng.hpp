#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace harmonizer {

/// Seeded generator whose output is identical on every platform: the raw
/// engine is std::mt19937_64 (fully specified by the standard) and all
/// derived distributions are implemented here instead of using the
/// implementation-defined <random> distributions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi] (inclusive), unbiased.
  int uniform_int(int lo, int hi);

  /// Standard normal via Box-Muller (one value per call, no caching).
  double normal();

  bool bernoulli(double p) { return uniform() < p; }

  std::string state() const;
  void set_state(const std::string& s);

  bool operator==(const Rng& o) const { return engine_ == o.engine_; }

 private:
  std::mt19937_64 engine_;
};

/// splitmix64 mixing of (master, index); used to derive independent sub-seeds.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index);

}  // namespace harmonizer
