#pragma once

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace hyprec {

// Deterministic random source. std::mt19937_64 output is fully specified by
// the standard, and every derived draw below avoids std::*_distribution so
// that streams are reproducible across standard libraries, not just across
// runs of one binary.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1) with 53 bits of mantissa.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Unbiased uniform draw from [0, n) via rejection on a power-of-two mask.
  std::uint64_t next_below(std::uint64_t n) {
    if (n <= 1) return 0;
    std::uint64_t mask = ~std::uint64_t{0} >> countl_zero_(n - 1);
    std::uint64_t v;
    do {
      v = next_u64() & mask;
    } while (v >= n);
    return v;
  }

  // Fisher-Yates.
  template <typename T>
  void shuffle(std::vector<T>& xs) {
    for (std::size_t i = xs.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(next_below(i));
      std::swap(xs[i - 1], xs[j]);
    }
  }

 private:
  static int countl_zero_(std::uint64_t x) {
    int n = 0;
    for (std::uint64_t bit = std::uint64_t{1} << 63; bit != 0 && !(x & bit); bit >>= 1) ++n;
    return n;
  }

  std::mt19937_64 gen_;
};

// Splits one user-facing seed into independent streams (init, sampling,
// shuffling, ...) so adding a consumer does not shift unrelated streams.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace hyprec
