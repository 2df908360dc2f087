#include "mi3d/rng.hpp"

#include <cmath>

#include "mi3d/errors.hpp"

namespace mi3d {

namespace {

inline std::uint64_t splitmix64(std::uint64_t& x) {
  x += 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline std::uint64_t rotl(std::uint64_t x, int k) {
  return (x << k) | (x >> (64 - k));
}

}  // namespace

Rng::Rng(std::uint64_t seed) {
  std::uint64_t x = seed;
  for (auto& s : s_) s = splitmix64(x);
  // All-zero state is invalid for xoshiro; splitmix64 cannot produce four
  // zero words from any seed, but keep the guard cheap and explicit.
  if ((s_[0] | s_[1] | s_[2] | s_[3]) == 0) s_[0] = 1;
}

std::uint64_t Rng::next_u64() {
  const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
  return lo + (hi - lo) * uniform();
}

std::uint64_t Rng::uniform_index(std::uint64_t n) {
  if (n == 0) throw ParameterError("uniform_index: n must be positive");
  // Rejection to avoid modulo bias.
  const std::uint64_t limit = n * (UINT64_MAX / n);
  std::uint64_t v = next_u64();
  while (v >= limit) v = next_u64();
  return v % n;
}

double Rng::normal() {
  // Box-Muller; u1 in (0,1] so log() is finite.
  double u1 = 1.0 - uniform();
  double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

double Rng::normal(double mean, double std) {
  return mean + std * normal();
}

double Rng::truncated_normal(double mean, double std, double k) {
  if (std == 0.0) return mean;
  for (;;) {
    double z = normal();
    if (z >= -k && z <= k) return mean + std * z;
  }
}

std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> ids) {
  std::uint64_t x = base ^ 0xA0761D6478BD642FULL;
  (void)splitmix64(x);
  std::uint64_t h = splitmix64(x);
  for (std::uint64_t id : ids) {
    std::uint64_t y = h ^ (id + 0x8EBC6AF09C88C6E3ULL);
    h = splitmix64(y);
  }
  return h;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t id) {
  return derive_seed(base, {id});
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t id1, std::uint64_t id2) {
  return derive_seed(base, {id1, id2});
}

}  // namespace mi3d
