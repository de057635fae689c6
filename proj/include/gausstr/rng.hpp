#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace gausstr {

// mt19937_64 engine with hand-rolled distributions, so streams are
// reproducible across standard libraries and platforms.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed), seed_(seed) {}

  uint64_t next_u64() { return eng_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  int64_t uniform_int(int64_t n) {  // [0, n)
    return static_cast<int64_t>(eng_() % static_cast<uint64_t>(n));
  }

  // Box-Muller; one fresh pair of uniforms per call.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Decorrelated child stream keyed off the original seed, e.g. one stream
  // per view or per module, independent of how much this stream consumed.
  Rng fork(uint64_t salt) const {
    uint64_t x = seed_ ^ (salt + 0x9e3779b97f4a7c15ULL);
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return Rng(x ^ (x >> 31));
  }

 private:
  std::mt19937_64 eng_;
  uint64_t seed_;
};

}  // namespace gausstr
