#include "focalpo/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "focalpo/errors.hpp"
#include "numerics_impl.hpp"

namespace focalpo {

namespace {

void require_finite(double x, const char* what) {
  if (!std::isfinite(x)) throw DomainError(std::string(what) + ": argument is not finite");
}

// Largest double below 1 and smallest normal double.
constexpr double kBelowOne = 1.0 - std::numeric_limits<double>::epsilon() / 2.0;
constexpr double kAboveZero = std::numeric_limits<double>::min();

}  // namespace

Probability::Probability(double value) : value_(value) {
  if (!(value > 0.0 && value < 1.0))
    throw DomainError("probability " + std::to_string(value) + " is not inside (0, 1)");
}

double Probability::clamped() const noexcept {
  return detail::clamp_probability(value_);
}

Probability sigmoid(double x) {
  require_finite(x, "sigmoid");
  return Probability(std::clamp(detail::sigmoid_raw(x), kAboveZero, kBelowOne));
}

double softplus(double x) {
  require_finite(x, "softplus");
  return detail::softplus_raw(x);
}

double log_sigmoid(double x) {
  require_finite(x, "log_sigmoid");
  return -softplus(-x);
}

double pow_via_exp(double p, double g) {
  if (!(p > 0.0 && p < 1.0))
    throw DomainError("pow_via_exp: base " + std::to_string(p) + " is not inside (0, 1)");
  require_finite(g, "pow_via_exp exponent");
  return detail::pow_clamped(p, g);
}

}  // namespace focalpo
