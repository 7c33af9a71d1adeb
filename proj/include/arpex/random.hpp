#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace arpex {

// Seeded random stream with an explicit Box-Muller normal sampler.
// std::normal_distribution is implementation-defined, which would make
// regression values toolchain-specific; this generator produces the same
// stream everywhere. All stochastic code takes one of these by reference,
// there is no global RNG.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  // Uniform on [0, 1).
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  // Uniform on [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal draw. Box-Muller; the sine partner is cached, so draws
  // consume the underlying engine in pairs.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  std::uint64_t next_u64() { return gen_(); }

  std::mt19937_64& engine() { return gen_; }

 private:
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// Splits a base seed into independent per-cell seeds (SplitMix64 step).
inline std::uint64_t mix_seed(std::uint64_t base, std::uint64_t salt) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace arpex
