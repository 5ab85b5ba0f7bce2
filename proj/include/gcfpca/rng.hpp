#pragma once

#include <cmath>
#include <cstdint>

namespace gcfpca {

// splitmix64 finalizer; used both as a generator step and as a key mixer.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Derives an independent stream key from (seed, index...). Deterministic and
// order-free, so parallel consumers keyed by index agree with serial runs.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  std::uint64_t s = seed;
  (void)splitmix64(s);
  s ^= a;
  (void)splitmix64(s);
  s ^= b;
  return splitmix64(s);
}

// Small self-contained generator. Not crypto; chosen over <random> engines so
// that simulated datasets are bit-identical across platforms and toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() { return splitmix64(state_); }

  // Uniform on (0, 1].
  double uniform() {
    return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
  }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  int bernoulli(double p) { return uniform() <= p ? 1 : 0; }

  // Inversion by sequential search; fine for the moderate means seen here.
  long poisson(double mu) {
    if (mu <= 0.0) return 0;
    if (mu > 700.0) {
      // Normal approximation far in the tail of what the models produce.
      const double z = normal();
      const double v = mu + std::sqrt(mu) * z;
      return v > 0.0 ? static_cast<long>(std::lround(v)) : 0L;
    }
    const double u = uniform();
    double p = std::exp(-mu);
    double cum = p;
    long k = 0;
    while (u > cum && k < 100000) {
      ++k;
      p *= mu / static_cast<double>(k);
      cum += p;
    }
    return k;
  }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace gcfpca
