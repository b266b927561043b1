#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace otto {

// splitmix64 output function.
inline uint64_t splitmix64_mix(uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

inline uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// Deterministic generator used everywhere randomness is needed. All draws are
// defined in terms of the splitmix64 stream so that identical seeds reproduce
// identical bytes across platforms and thread counts.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ull;
    return splitmix64_mix(state_);
  }

  // [0, 1)
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + uniform() * (hi - lo); }

  // [0, n); n must be > 0
  uint64_t uniform_int(uint64_t n) { return uint64_t(uniform() * double(n)); }

  // Box-Muller, always consumes exactly two draws.
  double gaussian() {
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  double gaussian(double mean, double stddev) { return mean + stddev * gaussian(); }

 private:
  uint64_t state_;
};

// Canonical stream derivation: one independent stream per (seed, tag, index).
inline uint64_t derive_seed(uint64_t seed, std::string_view tag, uint64_t index = 0) {
  uint64_t s = splitmix64_mix(seed ^ fnv1a64(tag));
  return splitmix64_mix(s + 0x9E3779B97F4A7C15ull * (index + 1));
}

inline Rng derive_rng(uint64_t seed, std::string_view tag, uint64_t index = 0) {
  return Rng(derive_seed(seed, tag, index));
}

}  // namespace otto
