#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>

namespace spilldid {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed of the index-th independent stream derived from a master seed.
inline std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t index) {
  return splitmix64(splitmix64(seed) ^ splitmix64(index + 0x5851f42d4c957f2dULL));
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}
  Rng(std::uint64_t seed, std::uint64_t stream) : gen_(stream_seed(seed, stream)) {}

  std::uint64_t bits() { return gen_(); }
  // uniform on [0, 1) with 53 random bits
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal(double mean = 0.0, double sd = 1.0) {
    // Box-Muller keeps the stream identical across standard libraries
    if (has_spare_) {
      has_spare_ = false;
      return mean + sd * spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * M_PI * u2);
    has_spare_ = true;
    return mean + sd * r * std::cos(2.0 * M_PI * u2);
  }
  bool bernoulli(double p) { return uniform() < p; }
  std::mt19937_64& engine() { return gen_; }

 private:
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

enum class Multiplier { Rademacher, Mammen };

/// Fills `out` with mean-zero, unit-variance multipliers.
inline void fill_multipliers(Rng& rng, Multiplier law, std::span<double> out) {
  if (law == Multiplier::Rademacher) {
    for (auto& v : out) v = (rng.bits() >> 63) ? 1.0 : -1.0;
    return;
  }
  const double s5 = std::sqrt(5.0);
  const double p = (s5 + 1.0) / (2.0 * s5);
  const double lo = -(s5 - 1.0) / 2.0, hi = (s5 + 1.0) / 2.0;
  for (auto& v : out) v = rng.uniform() < p ? lo : hi;
}

}  // namespace spilldid
