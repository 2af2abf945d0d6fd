#include "focalpo/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <random>
#include <string>

#include "focalpo/data.hpp"
#include "focalpo/errors.hpp"
#include "rng.hpp"

namespace focalpo {

using nlohmann::ordered_json;

std::string_view to_string(OptimizerKind kind) noexcept {
  return kind == OptimizerKind::Sgd ? "sgd" : "adam";
}

std::optional<OptimizerKind> parse_optimizer(std::string_view name) noexcept {
  if (name == "sgd") return OptimizerKind::Sgd;
  if (name == "adam") return OptimizerKind::Adam;
  return std::nullopt;
}

void TrainConfig::validate() const {
  loss.validate();
  if (!(std::isfinite(learning_rate) && learning_rate >= 0.0))
    throw ConfigError("learning rate must be finite and >= 0");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (num_epochs < 0) throw ConfigError("epoch count must be >= 0");
  if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
  if (optimizer.kind == OptimizerKind::Adam) {
    if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0) ||
        !(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0) || !(optimizer.epsilon > 0.0))
      throw ConfigError("adam needs beta1, beta2 in [0, 1) and epsilon > 0");
  }
}

OptimizerState OptimizerState::for_policy(const PolicyTable& policy) {
  OptimizerState state;
  state.first_moment.assign(policy.data().size(), 0.0);
  state.second_moment.assign(policy.data().size(), 0.0);
  return state;
}

BatchGradient compute_batch_gradient(const PolicyTable& policy, const PolicyTable& reference,
                                     std::span<const PreferencePair> batch,
                                     const LossConfig& loss) {
  if (batch.empty()) throw ConfigError("empty batch");
  if (!policy.same_shape(reference)) throw ConfigError("policy and reference shapes differ");

  BatchGradient out;
  out.gradient.assign(policy.data().size(), 0.0);
  out.diagnostics.reserve(batch.size());
  const std::size_t vocab = static_cast<std::size_t>(policy.vocab_size());
  const double scale = -loss.beta / static_cast<double>(batch.size());

  for (const auto& pair : batch) {
    const Margin margin = pair_margin(policy, reference, pair, loss.beta);
    if (!std::isfinite(margin)) throw NumericError(pair.pair_id, "non-finite margin");
    const LossOutput lo = pair_loss(loss, margin);
    if (!std::isfinite(lo.loss) || !std::isfinite(lo.weight))
      throw NumericError(pair.pair_id, "non-finite loss or gradient weight");

    GradTable diff = sequence_log_prob_grad(policy, pair.chosen_sequence());
    diff.add_scaled(sequence_log_prob_grad(policy, pair.rejected_sequence()), -1.0);
    for (const auto& [context, row] : diff.entries()) {
      for (std::size_t k = 0; k < vocab; ++k) {
        const double g = scale * lo.weight * row[k];
        if (!std::isfinite(g)) throw NumericError(pair.pair_id, "non-finite gradient entry");
        out.gradient[context * vocab + k] += g;
      }
    }
    out.diagnostics.push_back({pair.pair_id, margin, lo.probability, lo.loss, lo.weight,
                               classify_pair(reference, pair)});
  }
  return out;
}

std::vector<PairDiagnostics> train_step(PolicyTable& policy, const PolicyTable& reference,
                                        std::span<const PreferencePair> batch,
                                        const TrainConfig& config, OptimizerState& state) {
  BatchGradient bg = compute_batch_gradient(policy, reference, batch, config.loss);
  auto params = policy.data();
  const double lr = config.learning_rate;
  ++state.step;

  if (config.optimizer.kind == OptimizerKind::Sgd) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * bg.gradient[i];
    return std::move(bg.diagnostics);
  }

  const auto& opt = config.optimizer;
  if (state.first_moment.size() != params.size()) {
    state.first_moment.assign(params.size(), 0.0);
    state.second_moment.assign(params.size(), 0.0);
  }
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(opt.beta1, t);
  const double correction2 = 1.0 - std::pow(opt.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = bg.gradient[i];
    double& m = state.first_moment[i];
    double& v = state.second_moment[i];
    m = opt.beta1 * m + (1.0 - opt.beta1) * g;
    v = opt.beta2 * v + (1.0 - opt.beta2) * g * g;
    params[i] -= lr * (m / correction1) / (std::sqrt(v / correction2) + opt.epsilon);
  }
  return std::move(bg.diagnostics);
}

namespace {

std::optional<double> mean_or_absent(double sum, std::size_t count) {
  if (count == 0) return std::nullopt;
  return sum / static_cast<double>(count);
}

void check_subgroups(std::span<const PreferencePair> dataset, std::span<const Subgroup> subgroups) {
  if (subgroups.size() != dataset.size())
    throw ConfigError("subgroup labels do not match dataset size");
}

}  // namespace

EvalMetrics evaluate(const PolicyTable& policy, const PolicyTable& reference,
                     std::span<const PreferencePair> dataset, double beta) {
  const auto subgroups = classify_dataset(reference, dataset);
  return evaluate(policy, reference, dataset, subgroups, beta);
}

EvalMetrics evaluate(const PolicyTable& policy, const PolicyTable& reference,
                     std::span<const PreferencePair> dataset, std::span<const Subgroup> subgroups,
                     double beta) {
  check_subgroups(dataset, subgroups);
  if (!policy.same_shape(reference)) throw ConfigError("policy and reference shapes differ");

  EvalMetrics m;
  m.num_pairs = dataset.size();
  std::size_t correct_total = 0;
  std::size_t hits[2] = {0, 0};
  std::size_t counts[2] = {0, 0};
  double margin_sums[2] = {0.0, 0.0};
  std::size_t flips[2] = {0, 0};

  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& pair = dataset[i];
    const std::size_t g = subgroups[i] == Subgroup::CorrectAtInit ? 0 : 1;
    const Margin margin = pair_margin(policy, reference, pair, beta);
    const bool ranked = margin > 0.0;
    const bool policy_prefers_chosen = sequence_log_prob(policy, pair.chosen_sequence()) >
                                       sequence_log_prob(policy, pair.rejected_sequence());
    ++counts[g];
    margin_sums[g] += margin;
    if (ranked) {
      ++hits[g];
      ++correct_total;
    }
    if (g == 0 && !policy_prefers_chosen) ++flips[0];
    if (g == 1 && policy_prefers_chosen) ++flips[1];
  }

  m.overall_accuracy =
      dataset.empty() ? 0.0 : static_cast<double>(correct_total) / static_cast<double>(dataset.size());
  SubgroupMetrics* groups[2] = {&m.correct_at_init, &m.incorrect_at_init};
  for (int g = 0; g < 2; ++g) {
    groups[g]->count = counts[g];
    groups[g]->accuracy = mean_or_absent(static_cast<double>(hits[g]), counts[g]);
    groups[g]->mean_margin = mean_or_absent(margin_sums[g], counts[g]);
  }
  m.flip_correct_to_incorrect = mean_or_absent(static_cast<double>(flips[0]), counts[0]).value_or(0.0);
  m.flip_incorrect_to_correct = mean_or_absent(static_cast<double>(flips[1]), counts[1]).value_or(0.0);
  return m;
}

std::vector<LossConfig> standard_profile_variants(double beta) {
  return {LossConfig{LossVariant::Dpo, beta, 0.0},
          LossConfig{LossVariant::FocalApprox, beta, 0.05},
          LossConfig{LossVariant::FocusIncorrect, beta, 1.0}};
}

std::vector<WeightProfileRow> subgroup_weight_profile(const PolicyTable& policy,
                                                      const PolicyTable& reference,
                                                      std::span<const PreferencePair> dataset,
                                                      std::span<const LossConfig> variants) {
  const auto subgroups = classify_dataset(reference, dataset);
  return subgroup_weight_profile(policy, reference, dataset, subgroups, variants);
}

std::vector<WeightProfileRow> subgroup_weight_profile(const PolicyTable& policy,
                                                      const PolicyTable& reference,
                                                      std::span<const PreferencePair> dataset,
                                                      std::span<const Subgroup> subgroups,
                                                      std::span<const LossConfig> variants) {
  check_subgroups(dataset, subgroups);
  std::vector<WeightProfileRow> rows;
  rows.reserve(variants.size() * 2);
  for (const auto& variant : variants) {
    variant.validate();
    double sum[2] = {0.0, 0.0};
    double abs_sum[2] = {0.0, 0.0};
    std::size_t count[2] = {0, 0};
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      const std::size_t g = subgroups[i] == Subgroup::CorrectAtInit ? 0 : 1;
      const double w = gradient_weight(variant, pair_margin(policy, reference, dataset[i], variant.beta));
      sum[g] += w;
      abs_sum[g] += std::abs(w);
      ++count[g];
    }
    for (std::size_t g = 0; g < 2; ++g) {
      rows.push_back({variant, g == 0 ? Subgroup::CorrectAtInit : Subgroup::IncorrectAtInit, count[g],
                      mean_or_absent(sum[g], count[g]), mean_or_absent(abs_sum[g], count[g])});
    }
  }
  return rows;
}

namespace {

StepRecord record_step(std::uint64_t step, int epoch, const TrainConfig& config,
                       const PolicyTable& policy, const PolicyTable& reference,
                       std::span<const PreferencePair> dataset, std::span<const Subgroup> subgroups,
                       std::span<const LossConfig> profile_variants) {
  StepRecord rec;
  rec.step = step;
  rec.epoch = epoch;
  double loss_sum = 0.0;
  double abs_sum = 0.0;
  double w_sum[2] = {0.0, 0.0};
  std::size_t w_count[2] = {0, 0};
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const LossOutput lo = pair_loss(config.loss, pair_margin(policy, reference, dataset[i], config.loss.beta));
    loss_sum += lo.loss;
    abs_sum += std::abs(lo.weight);
    const std::size_t g = subgroups[i] == Subgroup::CorrectAtInit ? 0 : 1;
    w_sum[g] += lo.weight;
    ++w_count[g];
  }
  const double n = static_cast<double>(dataset.size());
  rec.mean_loss = loss_sum / n;
  rec.mean_abs_weight = abs_sum / n;
  rec.mean_weight_correct = mean_or_absent(w_sum[0], w_count[0]);
  rec.mean_weight_incorrect = mean_or_absent(w_sum[1], w_count[1]);
  rec.metrics = evaluate(policy, reference, dataset, subgroups, config.loss.beta);
  rec.profile = subgroup_weight_profile(policy, reference, dataset, subgroups, profile_variants);
  return rec;
}

}  // namespace

TrainReport train(const TrainConfig& config, std::span<const PreferencePair> dataset,
                  PolicyTable& policy, const PolicyTable& reference) {
  config.validate();
  if (dataset.empty()) throw ConfigError("cannot train on an empty dataset");
  if (!policy.same_shape(reference)) throw ConfigError("policy and reference shapes differ");

  const auto started = std::chrono::steady_clock::now();
  const auto subgroups = classify_dataset(reference, dataset);
  const auto profile_variants = standard_profile_variants(config.loss.beta);

  TrainReport report;
  report.config = config;
  report.steps.push_back(
      record_step(0, 0, config, policy, reference, dataset, subgroups, profile_variants));

  OptimizerState state = OptimizerState::for_policy(policy);
  std::mt19937_64 rng(config.shuffle_seed);
  std::vector<std::size_t> order(dataset.size());
  std::vector<PreferencePair> batch;
  batch.reserve(config.batch_size);
  std::uint64_t step = 0;

  for (int epoch = 1; epoch <= config.num_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[detail::uniform_index(rng, i)]);

    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      batch.clear();
      for (std::size_t i = start; i < stop; ++i) batch.push_back(dataset[order[i]]);
      train_step(policy, reference, batch, config, state);
      ++step;
      const bool last = epoch == config.num_epochs && stop == order.size();
      if (step % config.eval_every == 0 || last)
        report.steps.push_back(record_step(step, epoch, config, policy, reference, dataset,
                                           subgroups, profile_variants));
    }
  }

  report.total_steps = step;
  report.final_metrics = evaluate(policy, reference, dataset, subgroups, config.loss.beta);
  report.final_profile =
      subgroup_weight_profile(policy, reference, dataset, subgroups, profile_variants);
  report.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

namespace {

std::string fmt9(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", x);
  return buf;
}

std::string fmt9(const std::optional<double>& x) { return x ? fmt9(*x) : std::string(); }

ordered_json json_or_null(const std::optional<double>& x) {
  return x ? ordered_json(*x) : ordered_json(nullptr);
}

ordered_json to_json(const SubgroupMetrics& m) {
  ordered_json j;
  j["count"] = m.count;
  j["accuracy"] = json_or_null(m.accuracy);
  j["mean_margin"] = json_or_null(m.mean_margin);
  return j;
}

}  // namespace

void write_report_csv(std::ostream& out, const TrainReport& report) {
  out << "step,epoch,mean_loss,mean_abs_weight,mean_weight_correct,mean_weight_incorrect,"
         "accuracy_overall,accuracy_correct,accuracy_incorrect,mean_margin_correct,"
         "mean_margin_incorrect,flip_incorrect_to_correct,flip_correct_to_incorrect";
  if (!report.steps.empty()) {
    for (const auto& row : report.steps.front().profile)
      out << ',' << row.config.label() << "_weight_"
          << (row.subgroup == Subgroup::CorrectAtInit ? "correct" : "incorrect");
  }
  out << '\n';
  for (const auto& s : report.steps) {
    out << s.step << ',' << s.epoch << ',' << fmt9(s.mean_loss) << ',' << fmt9(s.mean_abs_weight)
        << ',' << fmt9(s.mean_weight_correct) << ',' << fmt9(s.mean_weight_incorrect) << ','
        << fmt9(s.metrics.overall_accuracy) << ',' << fmt9(s.metrics.correct_at_init.accuracy) << ','
        << fmt9(s.metrics.incorrect_at_init.accuracy) << ','
        << fmt9(s.metrics.correct_at_init.mean_margin) << ','
        << fmt9(s.metrics.incorrect_at_init.mean_margin) << ','
        << fmt9(s.metrics.flip_incorrect_to_correct) << ','
        << fmt9(s.metrics.flip_correct_to_incorrect);
    for (const auto& row : s.profile) out << ',' << fmt9(row.mean_weight);
    out << '\n';
  }
}

ordered_json to_json(const TrainConfig& config) {
  ordered_json j;
  j["loss"] = std::string(to_string(config.loss.variant));
  j["beta"] = config.loss.beta;
  j["gamma"] = config.loss.gamma;
  j["learning_rate"] = config.learning_rate;
  j["batch_size"] = config.batch_size;
  j["num_epochs"] = config.num_epochs;
  j["optimizer"] = std::string(to_string(config.optimizer.kind));
  if (config.optimizer.kind == OptimizerKind::Adam) {
    j["adam_beta1"] = config.optimizer.beta1;
    j["adam_beta2"] = config.optimizer.beta2;
    j["adam_epsilon"] = config.optimizer.epsilon;
  }
  j["shuffle_seed"] = config.shuffle_seed;
  j["eval_every"] = config.eval_every;
  return j;
}

ordered_json to_json(const EvalMetrics& m) {
  ordered_json j;
  j["num_pairs"] = m.num_pairs;
  j["overall_accuracy"] = m.overall_accuracy;
  j["correct_at_init"] = to_json(m.correct_at_init);
  j["incorrect_at_init"] = to_json(m.incorrect_at_init);
  j["flip_incorrect_to_correct"] = m.flip_incorrect_to_correct;
  j["flip_correct_to_incorrect"] = m.flip_correct_to_incorrect;
  return j;
}

ordered_json profile_to_json(std::span<const WeightProfileRow> rows) {
  ordered_json j = ordered_json::object();
  for (const auto& row : rows) {
    ordered_json entry;
    entry["count"] = row.count;
    entry["mean_weight"] = json_or_null(row.mean_weight);
    entry["mean_abs_weight"] = json_or_null(row.mean_abs_weight);
    j[row.config.label()][to_string(row.subgroup)] = entry;
  }
  return j;
}

ordered_json report_summary_json(const TrainReport& report) {
  ordered_json j;
  j["config"] = to_json(report.config);
  j["total_steps"] = report.total_steps;
  j["eval_points"] = report.steps.size();
  if (!report.steps.empty()) {
    j["initial_mean_loss"] = report.steps.front().mean_loss;
    j["final_mean_loss"] = report.steps.back().mean_loss;
  }
  ordered_json final_block = to_json(report.final_metrics);
  final_block["weights"] = profile_to_json(report.final_profile);
  j["final"] = final_block;
  return j;
}

}  // namespace focalpo
