#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace nerfmd {

// Deterministic random stream. Distribution math is implemented here rather
// than with std:: distributions so that streams are stable across standard
// library versions.
class Rng {
 public:
  explicit Rng(uint64_t seed)
      : gen_(static_cast<std::mt19937_64::result_type>(seed)), seed_base_(seed) {}

  uint64_t next_u64() { return gen_(); }

  double uniform() {
    // 53-bit mantissa in [0,1)
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }
  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  // Uniform integer in [0, n)
  uint64_t uniform_int(uint64_t n) {
    return static_cast<uint64_t>(uniform() * static_cast<double>(n)) % n;
  }

  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * M_PI * u2;
    cached_ = r * std::sin(theta);
    has_cached_ = true;
    return r * std::cos(theta);
  }

  // Independent substream derived from this seed and a tag (splitmix64 mix).
  static uint64_t mix(uint64_t a, uint64_t b) {
    uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
  Rng substream(uint64_t tag) const { return Rng(mix(seed_base_, tag)); }

 private:
  std::mt19937_64 gen_;
  uint64_t seed_base_ = 0;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace nerfmd
