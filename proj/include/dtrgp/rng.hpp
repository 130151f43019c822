#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace dtrgp {

// Deterministic random stream. The standard distributions are implementation
// defined, so every sampler here is written out explicitly; identical seeds
// give identical draws on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Uniform on [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller; one draw per call, cached partner.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  double exponential() {
    double u = uniform();
    while (u <= 0.0) u = uniform();
    return -std::log(u);
  }

  bool bernoulli(double p) { return uniform() < p; }

  std::uint64_t next_u64() { return engine_(); }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

// SplitMix64 finalizer; used to derive well-separated child seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Child seed for stream `stream_id` under `master`. Distinct ids give
// distinct streams; the derivation is pure so replicates can be run in any
// order or in parallel.
inline std::uint64_t child_seed(std::uint64_t master, std::uint64_t stream_id) {
  return splitmix64(splitmix64(master) ^ (0x9E3779B97F4A7C15ULL * (stream_id + 1)));
}

}  // namespace dtrgp
