#pragma once

#include <cstdint>
#include <initializer_list>

namespace mi3d {

// Deterministic xoshiro256++ generator with hand-rolled distributions.
// Standard-library distributions are implementation-defined, which would
// break the bit-reproducibility contract, so sampling is done here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();

  // Uniform double in [0, 1) with 53 random bits.
  double uniform();

  // Uniform double in [lo, hi).
  double uniform(double lo, double hi);

  // Uniform integer in [0, n). n must be positive.
  std::uint64_t uniform_index(std::uint64_t n);

  // Standard normal via Box-Muller (no cached spare, one draw per call,
  // so the stream position is a pure function of the call count).
  double normal();

  double normal(double mean, double std);

  // Normal truncated to [mean - k*std, mean + k*std] by resampling.
  double truncated_normal(double mean, double std, double k);

 private:
  std::uint64_t s_[4];
};

// Derives an independent stream seed from a base seed and stream ids
// (splitmix64-based hash combine). Used to give every subject, fold and
// grid cell its own reproducible stream.
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> ids);
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t id);
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t id1, std::uint64_t id2);

}  // namespace mi3d
