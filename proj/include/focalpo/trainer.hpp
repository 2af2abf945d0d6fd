#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "focalpo/losses.hpp"
#include "focalpo/policy.hpp"
#include "focalpo/types.hpp"

namespace focalpo {

enum class OptimizerKind { Sgd, Adam };

std::string_view to_string(OptimizerKind kind) noexcept;
std::optional<OptimizerKind> parse_optimizer(std::string_view name) noexcept;

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;
};

struct TrainConfig {
  LossConfig loss;
  double learning_rate = 3e-3;  // 0 is a valid null run
  std::size_t batch_size = 128;
  int num_epochs = 1;  // 0 records only the step-0 evaluation
  OptimizerConfig optimizer;
  std::uint64_t shuffle_seed = 0;
  std::size_t eval_every = 10;

  void validate() const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Adam moments for every logit, plus the step counter. Unused by SGD.
struct OptimizerState {
  std::uint64_t step = 0;
  std::vector<double> first_moment;
  std::vector<double> second_moment;

  static OptimizerState for_policy(const PolicyTable& policy);
};

struct PairDiagnostics {
  std::uint64_t pair_id = 0;
  Margin margin = 0.0;
  Probability probability{0.5};
  double loss = 0.0;
  double weight = 0.0;
  Subgroup subgroup = Subgroup::IncorrectAtInit;
};

struct BatchGradient {
  /// d(mean pair loss)/d logits, laid out like PolicyTable::data().
  std::vector<double> gradient;
  std::vector<PairDiagnostics> diagnostics;
};

/// G = -(1/|B|) sum_i w_i * beta * (grad log pi(chosen_i) - grad log pi(rejected_i)).
/// Throws NumericError naming the pair whose contribution is not finite.
BatchGradient compute_batch_gradient(const PolicyTable& policy, const PolicyTable& reference,
                                     std::span<const PreferencePair> batch,
                                     const LossConfig& loss);

/// One optimizer update on `policy`. `reference` is only read.
std::vector<PairDiagnostics> train_step(PolicyTable& policy, const PolicyTable& reference,
                                        std::span<const PreferencePair> batch,
                                        const TrainConfig& config, OptimizerState& state);

struct SubgroupMetrics {
  std::size_t count = 0;
  std::optional<double> accuracy;     // fraction with margin > 0
  std::optional<double> mean_margin;

  friend bool operator==(const SubgroupMetrics&, const SubgroupMetrics&) = default;
};

struct EvalMetrics {
  std::size_t num_pairs = 0;
  double overall_accuracy = 0.0;
  SubgroupMetrics correct_at_init;
  SubgroupMetrics incorrect_at_init;
  /// Share of IncorrectAtInit pairs the policy now ranks correctly by log-likelihood.
  double flip_incorrect_to_correct = 0.0;
  /// Share of CorrectAtInit pairs the policy now ranks incorrectly by log-likelihood.
  double flip_correct_to_incorrect = 0.0;

  friend bool operator==(const EvalMetrics&, const EvalMetrics&) = default;
};

/// Ranking metrics of `policy` on `dataset`. Subgroups come from `reference`.
EvalMetrics evaluate(const PolicyTable& policy, const PolicyTable& reference,
                     std::span<const PreferencePair> dataset, double beta);
EvalMetrics evaluate(const PolicyTable& policy, const PolicyTable& reference,
                     std::span<const PreferencePair> dataset, std::span<const Subgroup> subgroups,
                     double beta);

struct WeightProfileRow {
  LossConfig config;
  Subgroup subgroup = Subgroup::CorrectAtInit;
  std::size_t count = 0;
  std::optional<double> mean_weight;      // absent for an empty subgroup
  std::optional<double> mean_abs_weight;

  friend bool operator==(const WeightProfileRow&, const WeightProfileRow&) = default;
};

/// Dpo, FocalApprox(gamma 0.05) and FocusIncorrect(gamma 1) at the given beta.
std::vector<LossConfig> standard_profile_variants(double beta);

/// Mean gradient weight per (variant, subgroup) at the current policy. Rows are
/// ordered variant-major, CorrectAtInit first.
std::vector<WeightProfileRow> subgroup_weight_profile(const PolicyTable& policy,
                                                      const PolicyTable& reference,
                                                      std::span<const PreferencePair> dataset,
                                                      std::span<const LossConfig> variants);
std::vector<WeightProfileRow> subgroup_weight_profile(const PolicyTable& policy,
                                                      const PolicyTable& reference,
                                                      std::span<const PreferencePair> dataset,
                                                      std::span<const Subgroup> subgroups,
                                                      std::span<const LossConfig> variants);

struct StepRecord {
  std::uint64_t step = 0;
  int epoch = 0;
  double mean_loss = 0.0;
  double mean_abs_weight = 0.0;
  std::optional<double> mean_weight_correct;
  std::optional<double> mean_weight_incorrect;
  EvalMetrics metrics;
  std::vector<WeightProfileRow> profile;  // standard_profile_variants

  friend bool operator==(const StepRecord&, const StepRecord&) = default;
};

struct TrainReport {
  TrainConfig config;
  std::vector<StepRecord> steps;
  std::uint64_t total_steps = 0;
  EvalMetrics final_metrics;
  std::vector<WeightProfileRow> final_profile;
  double wall_clock_seconds = 0.0;  // excluded from equality and from summary JSON

  friend bool operator==(const TrainReport& a, const TrainReport& b) {
    return a.config == b.config && a.steps == b.steps && a.total_steps == b.total_steps &&
           a.final_metrics == b.final_metrics && a.final_profile == b.final_profile;
  }
};

/// Mini-batch training. Shuffles once per epoch from shuffle_seed, evaluates on
/// the whole dataset at step 0, every eval_every steps, and after the last step.
/// Throws ConfigError for an empty dataset.
TrainReport train(const TrainConfig& config, std::span<const PreferencePair> dataset,
                  PolicyTable& policy, const PolicyTable& reference);

// Serialization. CSV numbers use 9 significant digits; absent values are empty.
void write_report_csv(std::ostream& out, const TrainReport& report);
nlohmann::ordered_json to_json(const TrainConfig& config);
nlohmann::ordered_json to_json(const EvalMetrics& metrics);
/// {"dpo": {...}, "focal_approx_g0.05": {...}, ...} keyed by LossConfig::label().
nlohmann::ordered_json profile_to_json(std::span<const WeightProfileRow> rows);
nlohmann::ordered_json report_summary_json(const TrainReport& report);

}  // namespace focalpo
