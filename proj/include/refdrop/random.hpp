#pragma once

#include <array>
#include <cstdint>

#include "refdrop/matrix.hpp"

namespace refdrop {

// xoshiro256** (Blackman & Vigna). State words are filled from splitmix64
// applied to the seed, so every 64-bit seed yields a valid nonzero state.
class Xoshiro256 {
 public:
  using result_type = std::uint64_t;

  explicit Xoshiro256(std::uint64_t seed);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }

  result_type operator()();

  /// Uniform double in [0, 1) from the top 53 bits.
  double uniform01() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

 private:
  std::array<std::uint64_t, 4> s_{};
};

std::uint64_t splitmix64(std::uint64_t& state);

/// Deterministically combines a base seed with stream identifiers.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0);

/// Row-major fill with uniform values in [lo, hi).
template <typename T>
Matrix<T> random_matrix(Xoshiro256& rng, std::size_t rows, std::size_t cols, double lo = -1.0,
                        double hi = 1.0) {
  std::vector<T> data(rows * cols);
  for (T& v : data) v = static_cast<T>(rng.uniform(lo, hi));
  return Matrix<T>(rows, cols, std::move(data));
}

}  // namespace refdrop
