#pragma once

// Precision-generic kernels behind the double API in numerics.hpp. The loss
// code instantiates them with long double so that a loss value is rounded to
// double once, at the end.

#include <algorithm>
#include <cmath>
#include <limits>

#include "focalpo/numerics.hpp"

namespace focalpo::detail {

template <typename T>
T sigmoid_raw(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
T softplus_raw(T x) {
  return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
}

template <typename T>
T clamp_probability(T p) {
  return std::clamp(p, T(kProbabilityEpsilon), T(1) - T(kProbabilityEpsilon));
}

template <typename T>
bool clamp_active(T p) {
  return p < T(kProbabilityEpsilon) || p > T(1) - T(kProbabilityEpsilon);
}

/// exp(g ln p) on the clamped base; p must already be inside (0, 1).
template <typename T>
T pow_clamped(T p, T g) {
  if (g == T(0)) return T(1);
  return std::exp(g * std::log(clamp_probability(p)));
}

}  // namespace focalpo::detail
