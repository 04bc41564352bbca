#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace excelformer {

/// Seeded random stream. Everything stochastic in the library draws from one
/// of these so that a run is a pure function of its seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  /// Independent child stream; same (seed, stream) always gives the same child.
  Rng fork(std::uint64_t stream) const;

  std::uint64_t seed() const { return seed_; }
  std::mt19937_64& engine() { return engine_; }

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }
  /// Beta(a, b) as a ratio of gamma variates.
  double beta(double a, double b);
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }
  std::vector<std::size_t> permutation(std::size_t n);
  /// `count` distinct indices of [0, n), uniformly without replacement, in
  /// draw order.
  std::vector<std::size_t> choose(std::size_t n, std::size_t count);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace excelformer
