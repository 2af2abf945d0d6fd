#pragma once

// Portable draws on top of std::mt19937_64. The standard distributions are
// implementation-defined, so uniform draws used for data generation go through
// these helpers.

#include <cstdint>
#include <random>

namespace focalpo::detail {

/// Uniform double in [0, 1) from the top 53 bits.
inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Uniform integer in [0, n) by rejection.
inline std::uint64_t uniform_index(std::mt19937_64& rng, std::uint64_t n) {
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % n;
}

}  // namespace focalpo::detail
