#pragma once

#include <cstdint>
#include <random>

namespace gnap {

/// Seeded random stream. `split(key)` derives an independent child stream
/// from the seed alone, so children do not depend on how much of the parent
/// has been consumed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(mix(seed)) {}

  std::uint64_t seed() const { return seed_; }

  Rng split(std::uint64_t key) const { return Rng(mix(seed_ ^ mix(key + 0x632be59bd9b4e019ULL))); }

  /// Uniform in the open interval (0, 1).
  double uniform_open() {
    double u = std::uniform_real_distribution<double>(0.0, 1.0)(engine_);
    while (u <= 0.0) u = std::uniform_real_distribution<double>(0.0, 1.0)(engine_);
    return u;
  }

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }

  double normal(double mean, double stddev) { return std::normal_distribution<double>(mean, stddev)(engine_); }

  bool bernoulli(double p) { return uniform(0.0, 1.0) < p; }

  /// Uniform integer in [lo, hi].
  std::int64_t integer(std::int64_t lo, std::int64_t hi) {
    return std::uniform_int_distribution<std::int64_t>(lo, hi)(engine_);
  }

  std::mt19937_64& engine() { return engine_; }

  static std::uint64_t mix(std::uint64_t x) {
    // splitmix64 finalizer
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace gnap
