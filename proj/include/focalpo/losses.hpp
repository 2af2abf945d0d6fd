#pragma once

#include <optional>
#include <string>
#include <string_view>

#include "focalpo/numerics.hpp"

namespace focalpo {

/// The loss family. Every member is a per-pair function of the margin only.
///
///   Dpo            -log p
///   FocalExact     -(1 - p)^(-gamma) log p
///   FocalApprox    -p^gamma log p            (the adopted FocalPO loss)
///   FocusIncorrect -(1 - p)^gamma log p      (ablation: up-weights misranked pairs)
///
/// with p = sigmoid(margin).
enum class LossVariant { Dpo, FocalExact, FocalApprox, FocusIncorrect };

/// CLI name: dpo, focal-exact, focal, focus-incorrect.
std::string_view to_string(LossVariant variant) noexcept;
/// Inverse of to_string; std::nullopt for unknown names.
std::optional<LossVariant> parse_loss_variant(std::string_view name) noexcept;

/// Upper bound accepted for gamma.
inline constexpr double kMaxGamma = 5.0;

struct LossConfig {
  LossVariant variant = LossVariant::FocalApprox;
  double beta = 0.01;   // implicit-reward temperature
  double gamma = 0.05;  // focusing parameter; ignored by Dpo

  /// Throws ConfigError unless beta > 0, 0 <= gamma <= kMaxGamma, and
  /// gamma > 0 for every variant other than Dpo.
  void validate() const;

  /// True when a FocalApprox gamma lies above 1, outside the tuned range.
  bool gamma_outside_tuned_range() const noexcept;

  /// Column-style label such as "focal_approx_g0.05" or "dpo".
  std::string label() const;

  friend bool operator==(const LossConfig&, const LossConfig&) = default;
};

struct LossOutput {
  double loss = 0.0;
  Probability probability{0.5};
  double factor = 1.0;
  /// -dL/dmargin; multiplies grad(log pi(y_w) - log pi(y_l)) in the descent direction.
  double weight = 0.0;
};

/// sigmoid(margin): probability that the chosen response wins.
Probability preference_probability(Margin margin);

/// Modulating factor applied to -log p. Throws DomainError for gamma < 0.
double modulating_factor(LossVariant variant, Probability p, double gamma);

/// Loss, probability, factor and gradient weight at one margin.
LossOutput pair_loss(const LossConfig& config, Margin margin);

/// -d pair_loss / d margin.
double gradient_weight(const LossConfig& config, Margin margin);

}  // namespace focalpo
