#pragma once

// Scalar primitives shared by the loss and gradient code. Everything here is a
// pure function of its arguments.

namespace focalpo {

/// Probabilities are clamped to [kProbabilityEpsilon, 1 - kProbabilityEpsilon]
/// before they enter a logarithm or a power.
inline constexpr double kProbabilityEpsilon = 1e-12;

/// A value strictly inside (0, 1).
class Probability {
 public:
  /// Throws DomainError unless 0 < value < 1.
  explicit Probability(double value);

  double value() const noexcept { return value_; }
  /// 1 - value; exact in double for value >= 0.5.
  double complement() const noexcept { return 1.0 - value_; }
  /// The value clamped to [eps, 1 - eps].
  double clamped() const noexcept;

  friend bool operator==(Probability a, Probability b) noexcept { return a.value_ == b.value_; }

 private:
  double value_;
};

/// Implicit-reward margin, in beta-scaled log-probability units.
using Margin = double;

/// Logistic function. Never exponentiates a positive argument; the result is
/// kept strictly inside (0, 1) even when the exact value rounds to 0 or 1.
Probability sigmoid(double x);

/// log(1 + exp(x)), without overflow or cancellation.
double softplus(double x);

/// log sigmoid(x) = -softplus(-x); always <= 0.
double log_sigmoid(double x);

/// exp(g * ln p) with p clamped to [eps, 1 - eps]. Exactly 1 when g == 0.
/// Throws DomainError when p is not inside (0, 1) or g is not finite.
double pow_via_exp(double p, double g);

}  // namespace focalpo
