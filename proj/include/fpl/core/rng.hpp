#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace fpl {

/// Seeded random stream. Distribution transforms are written out here rather than taken from
/// <random> so that a given seed yields the same numbers with every standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [lo, hi].
  int uniform_int(int lo, int hi);
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  bool bernoulli(double p) { return uniform() < p; }

  /// Independent child stream derived from this stream's next draw and a name.
  Rng split(std::string_view name);

 private:
  std::mt19937_64 engine_;
  double cached_normal_ = 0.0;
  bool has_cached_normal_ = false;
};

/// Deterministic seed for a named substream of `root`.
std::uint64_t substream_seed(std::uint64_t root, std::string_view name);

}  // namespace fpl
