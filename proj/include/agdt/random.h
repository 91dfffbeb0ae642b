// SPDX-License-Identifier: Apache-2.0
/**
 * @file   random.h
 * @brief  Seeded random source with platform-independent draws.
 *
 * The standard distributions are implementation-defined, so reals and
 * bounded integers are derived from the raw mt19937_64 stream here.
 */
#ifndef AGDT_RANDOM_H
#define AGDT_RANDOM_H

#include <cstdint>
#include <random>
#include <span>
#include <utility>

namespace agdt {

/// splitmix64 finalizer; used to derive independent stream seeds.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

class Rng {
public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer on [0, n), rejection sampled.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  bool bernoulli(double p) { return uniform() < p; }

  template <typename T> void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i)
      std::swap(items[i - 1], items[below(i)]);
  }

  /// Child generator whose stream does not overlap this one's seed.
  Rng fork(std::uint64_t stream) { return Rng(mix_seed(engine_(), stream)); }

private:
  std::mt19937_64 engine_;
};

} // namespace agdt

#endif // AGDT_RANDOM_H
