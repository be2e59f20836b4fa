#pragma once

#include <cstdint>

namespace aspdc {

// xoshiro256** seeded through splitmix64. Hand-rolled distributions so that
// sequences are bit-identical across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Inclusive range.
  int uniform_int(int lo, int hi);
  // Standard normal via Box-Muller (one draw per call).
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Independent stream seed for item `index` of a run seeded with `master`.
  static std::uint64_t derive(std::uint64_t master, std::uint64_t index);

 private:
  std::uint64_t s_[4];
};

}  // namespace aspdc
