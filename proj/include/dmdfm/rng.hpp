#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace dmdfm {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Derives the seed of an independent named substream from (master seed,
/// replication index, component id). Adding a component never shifts the
/// draws of any other component.
inline std::uint64_t derive_stream(std::uint64_t seed, std::uint64_t rep, std::uint64_t component) {
  std::uint64_t s = seed;
  std::uint64_t a = splitmix64(s);
  s ^= rep * 0x9e3779b97f4a7c15ULL;
  std::uint64_t b = splitmix64(s);
  s ^= component * 0xc2b2ae3d27d4eb4fULL;
  std::uint64_t c = splitmix64(s);
  return a ^ (b + 0x165667b19e3779f9ULL + (c << 1));
}

/// Deterministic RNG with fixed variate algorithms. std::normal_distribution
/// and friends are implementation-defined, so uniform and normal draws are
/// generated explicitly to keep output streams stable across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Standard normal via Marsaglia's polar method (second variate cached).
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform01() - 1.0;
      v = 2.0 * uniform01() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double m = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * m;
    has_spare_ = true;
    return u * m;
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  /// Uniform integer on [0, n).
  int uniform_int(int n) { return static_cast<int>(uniform01() * n); }

 private:
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace dmdfm
