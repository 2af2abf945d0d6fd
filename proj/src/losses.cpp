#include "focalpo/losses.hpp"

#include <cmath>
#include <cstdio>

#include "focalpo/errors.hpp"
#include "numerics_impl.hpp"

namespace focalpo {

namespace {

// Loss arithmetic runs in extended precision: near the FocalExact gamma = 1
// plateau the loss is 1 + O(exp(-margin)) and every ulp of it shows up in a
// finite difference of the loss.
using Wide = long double;

struct Factor {
  Wide value = 1;
  Wide dlog = 0;  // d ln(factor) / d margin; zero where the clamp is active
};

// p = sigmoid(margin) and s = sigmoid(-margin) are passed separately so that
// s keeps full relative precision when p is close to 1.
Factor factor_terms(LossVariant variant, Wide p, Wide s, Wide gamma) {
  using detail::clamp_active;
  using detail::pow_clamped;
  switch (variant) {
    case LossVariant::Dpo:
      return {};
    case LossVariant::FocalApprox:
      return {pow_clamped(p, gamma), clamp_active(p) ? Wide(0) : gamma * s};
    case LossVariant::FocalExact:
      return {pow_clamped(s, -gamma), clamp_active(s) ? Wide(0) : gamma * p};
    case LossVariant::FocusIncorrect:
      return {pow_clamped(s, gamma), clamp_active(s) ? Wide(0) : -gamma * p};
  }
  return {};
}

void require_margin(Margin margin) {
  if (!std::isfinite(margin)) throw DomainError("margin is not finite");
}

}  // namespace

std::string_view to_string(LossVariant variant) noexcept {
  switch (variant) {
    case LossVariant::Dpo: return "dpo";
    case LossVariant::FocalExact: return "focal-exact";
    case LossVariant::FocalApprox: return "focal";
    case LossVariant::FocusIncorrect: return "focus-incorrect";
  }
  return "unknown";
}

std::optional<LossVariant> parse_loss_variant(std::string_view name) noexcept {
  if (name == "dpo") return LossVariant::Dpo;
  if (name == "focal") return LossVariant::FocalApprox;
  if (name == "focal-exact") return LossVariant::FocalExact;
  if (name == "focus-incorrect") return LossVariant::FocusIncorrect;
  return std::nullopt;
}

void LossConfig::validate() const {
  if (!(std::isfinite(beta) && beta > 0.0)) throw ConfigError("beta must be finite and > 0");
  if (!(std::isfinite(gamma) && gamma >= 0.0 && gamma <= kMaxGamma))
    throw ConfigError("gamma must lie in [0, 5]");
  if (variant != LossVariant::Dpo && gamma <= 0.0)
    throw ConfigError(std::string(to_string(variant)) + " requires gamma > 0");
}

bool LossConfig::gamma_outside_tuned_range() const noexcept {
  return variant == LossVariant::FocalApprox && gamma > 1.0;
}

std::string LossConfig::label() const {
  const char* stem = "dpo";
  switch (variant) {
    case LossVariant::Dpo: return stem;
    case LossVariant::FocalExact: stem = "focal_exact"; break;
    case LossVariant::FocalApprox: stem = "focal_approx"; break;
    case LossVariant::FocusIncorrect: stem = "focus_incorrect"; break;
  }
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_g%g", stem, gamma);
  return buf;
}

Probability preference_probability(Margin margin) { return sigmoid(margin); }

double modulating_factor(LossVariant variant, Probability p, double gamma) {
  if (!(gamma >= 0.0)) throw DomainError("gamma must be >= 0");
  const Wide pw = p.value();
  return static_cast<double>(factor_terms(variant, pw, Wide(1) - pw, gamma).value);
}

LossOutput pair_loss(const LossConfig& config, Margin margin) {
  require_margin(margin);
  if (!(config.gamma >= 0.0)) throw DomainError("gamma must be >= 0");
  const Wide m = margin;
  const Wide p = detail::sigmoid_raw(m);
  const Wide s = detail::sigmoid_raw(-m);
  const Wide base = detail::softplus_raw(-m);  // -log sigmoid(margin)
  const Factor f = factor_terms(config.variant, p, s, config.gamma);

  LossOutput out;
  out.probability = sigmoid(margin);
  out.factor = static_cast<double>(f.value);
  out.loss = static_cast<double>(f.value * base);
  // -d(f * base)/dm = f * s - f' * base, with f' = f * dlog.
  out.weight = static_cast<double>(f.value * (s - f.dlog * base));
  return out;
}

double gradient_weight(const LossConfig& config, Margin margin) {
  return pair_loss(config, margin).weight;
}

}  // namespace focalpo
