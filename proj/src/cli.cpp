#include "focalpo/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"

#include "focalpo/data.hpp"
#include "focalpo/errors.hpp"
#include "focalpo/losses.hpp"
#include "focalpo/policy.hpp"
#include "focalpo/trainer.hpp"

namespace focalpo::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

std::string fmt9(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", x);
  return buf;
}

std::string shape_string(const PolicyTable& t) {
  return std::to_string(t.num_prompt_classes()) + "x" + std::to_string(t.vocab_size());
}

// LF endings regardless of platform.
void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

double parse_number(std::string_view token, std::string_view spec) {
  double value = 0.0;
  const char* begin = token.data();
  const char* end = token.data() + token.size();
  const auto [ptr, ec] = std::from_chars(begin, end, value);
  if (token.empty() || ec != std::errc() || ptr != end || !std::isfinite(value))
    throw UsageError("malformed grid spec '" + std::string(spec) + "': bad token '" +
                     std::string(token) + "'");
  return value;
}

// ---------------------------------------------------------------- curves

struct CurvesOptions {
  std::vector<double> gammas{0.05, 0.07, 0.5, 1.0};
  std::string delta_grid = "-10:10:0.1";
  std::string p_grid = "0.01:0.99:0.01";
  std::string out_dir;
};

int cmd_curves(const CurvesOptions& opt, std::ostream& out) {
  const auto deltas = parse_grid(opt.delta_grid);
  const auto ps = parse_grid(opt.p_grid);
  for (double p : ps)
    if (!(p > 0.0 && p < 1.0)) throw UsageError("p grid values must lie inside (0, 1)");

  std::set<double> gamma_set(opt.gammas.begin(), opt.gammas.end());
  gamma_set.insert(0.05);
  gamma_set.insert(1.0);
  for (double g : gamma_set)
    if (!(g > 0.0 && g <= kMaxGamma)) throw UsageError("--gamma values must lie in (0, 5]");
  const std::vector<double> gammas(gamma_set.begin(), gamma_set.end());

  std::vector<LossConfig> variants{LossConfig{LossVariant::Dpo, 0.01, 0.0}};
  for (double g : gammas) {
    variants.push_back({LossVariant::FocalApprox, 0.01, g});
    variants.push_back({LossVariant::FocalExact, 0.01, g});
    variants.push_back({LossVariant::FocusIncorrect, 0.01, g});
  }
  for (const auto& v : variants)
    if (v.gamma_outside_tuned_range())
      out << "notice: " << v.label() << " uses gamma > 1, outside the tuned range\n";

  const fs::path dir(opt.out_dir);
  ensure_dir(dir);
  RunManifest manifest;
  manifest.command = "curves";
  manifest.config["gammas"] = gammas;
  manifest.config["delta_grid"] = opt.delta_grid;
  manifest.config["p_grid"] = opt.p_grid;
  manifest.outputs = {"factors.csv", "weights.csv", "loss_gap.csv"};
  write_manifest(dir, manifest);

  std::ostringstream factors;
  factors << 'p';
  for (std::size_t i = 1; i < variants.size(); ++i) factors << ',' << variants[i].label();
  factors << '\n';
  for (double p : ps) {
    factors << fmt9(p);
    for (std::size_t i = 1; i < variants.size(); ++i)
      factors << ',' << fmt9(modulating_factor(variants[i].variant, Probability(p), variants[i].gamma));
    factors << '\n';
  }
  write_text(dir / "factors.csv", factors.str());

  std::ostringstream weights;
  weights << "delta";
  for (const auto& v : variants) weights << ',' << v.label();
  weights << '\n';
  for (double d : deltas) {
    weights << fmt9(d);
    for (const auto& v : variants) weights << ',' << fmt9(gradient_weight(v, d));
    weights << '\n';
  }
  write_text(dir / "weights.csv", weights.str());

  std::ostringstream gap;
  gap << "delta";
  for (double g : gammas) {
    const std::string suffix = LossConfig{LossVariant::FocalApprox, 0.01, g}.label().substr(12);
    gap << ",focal_exact" << suffix << "_loss,focal_approx" << suffix << "_loss,gap" << suffix;
  }
  gap << '\n';
  for (double d : deltas) {
    gap << fmt9(d);
    for (double g : gammas) {
      const double exact = pair_loss({LossVariant::FocalExact, 0.01, g}, d).loss;
      const double approx = pair_loss({LossVariant::FocalApprox, 0.01, g}, d).loss;
      gap << ',' << fmt9(exact) << ',' << fmt9(approx) << ',' << fmt9(exact - approx);
    }
    gap << '\n';
  }
  write_text(dir / "loss_gap.csv", gap.str());

  out << "wrote " << ps.size() << " factor rows and " << deltas.size() << " weight rows to "
      << dir.string() << '\n';
  return kOk;
}

// ---------------------------------------------------------------- synth

struct SynthOptions {
  SynthConfig config;
  std::string mode = "deterministic";
  std::uint64_t reference_seed = 7;
  std::uint64_t reward_seed = 11;
  double holdout = 0.0;
  std::uint64_t split_seed = 3;
  std::string out_dir;
};

int cmd_synth(SynthOptions opt, std::ostream& out) {
  const auto mode = parse_labeling_mode(opt.mode);
  if (!mode) throw UsageError("--mode must be deterministic or bradley-terry, got '" + opt.mode + "'");
  opt.config.labeling_mode = *mode;
  try {
    opt.config.validate();
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  if (!(opt.holdout >= 0.0 && opt.holdout < 1.0)) throw UsageError("--holdout must lie in [0, 1)");

  const auto& c = opt.config;
  const fs::path dir(opt.out_dir);
  ensure_dir(dir);
  RunManifest manifest;
  manifest.command = "synth";
  manifest.config["pairs"] = c.num_pairs;
  manifest.config["classes"] = c.prompt_classes;
  manifest.config["vocab"] = c.vocab_size;
  manifest.config["length"] = c.seq_length;
  manifest.config["mode"] = std::string(to_string(c.labeling_mode));
  manifest.config["noise"] = c.noise_rate;
  manifest.config["holdout"] = opt.holdout;
  manifest.seeds["generator"] = c.generator_seed;
  manifest.seeds["reference"] = opt.reference_seed;
  manifest.seeds["reward"] = opt.reward_seed;
  manifest.seeds["split"] = opt.split_seed;
  if (opt.holdout > 0.0)
    manifest.outputs = {"reference.policy", "train.jsonl", "heldout.jsonl"};
  else
    manifest.outputs = {"reference.policy", "dataset.jsonl"};
  write_manifest(dir, manifest);

  const PolicyTable reference = PolicyTable::random_normal(c.prompt_classes, c.vocab_size, opt.reference_seed);
  const TrueRewardModel reward = TrueRewardModel::random_normal(c.prompt_classes, c.vocab_size, opt.reward_seed);
  const auto pairs = synthesize_dataset(c, reward, reference);

  save_policy(dir / "reference.policy", reference);
  if (opt.holdout == 0.0) save_dataset(dir / "dataset.jsonl", pairs);
  if (opt.holdout > 0.0) {
    const auto split = split_dataset(pairs, opt.holdout, opt.split_seed);
    save_dataset(dir / "train.jsonl", split.train);
    save_dataset(dir / "heldout.jsonl", split.heldout);
    out << "train pairs: " << split.train.size() << "\nheldout pairs: " << split.heldout.size() << '\n';
  }

  const DatasetCensus cs = census(reference, pairs);
  out << "pairs: " << cs.num_pairs << '\n'
      << "flipped: " << cs.flipped << " (" << fmt9(cs.flipped_fraction()) << ")\n"
      << "misordered by true reward: " << cs.misordered << " (" << fmt9(cs.misordered_fraction()) << ")\n"
      << "correct_at_init: " << cs.correct_at_init << '\n'
      << "incorrect_at_init: " << cs.incorrect_at_init << '\n'
      << "learnable: " << (cs.learnable() ? "yes" : "no") << '\n';
  return kOk;
}

// ---------------------------------------------------------------- train

struct TrainOptions {
  std::string dataset;
  std::string reference;
  std::string loss = "focal";
  TrainConfig config;
  std::string optimizer = "adam";
  std::string out_dir;
  bool gamma_given = false;
};

int cmd_train(TrainOptions opt, std::ostream& out) {
  const auto variant = parse_loss_variant(opt.loss);
  if (!variant)
    throw UsageError("--loss must be one of dpo, focal, focal-exact, focus-incorrect; got '" + opt.loss + "'");
  opt.config.loss.variant = *variant;
  const auto kind = parse_optimizer(opt.optimizer);
  if (!kind) throw UsageError("--optimizer must be adam or sgd; got '" + opt.optimizer + "'");
  opt.config.optimizer.kind = *kind;
  try {
    opt.config.validate();
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  if (*variant == LossVariant::Dpo && opt.gamma_given)
    out << "notice: --gamma is ignored for the dpo loss\n";
  if (opt.config.loss.gamma_outside_tuned_range())
    out << "notice: gamma " << fmt9(opt.config.loss.gamma)
        << " is above 1, outside the tuned range for focal\n";

  const PolicyTable reference = load_policy(opt.reference);
  const auto dataset = load_dataset(
      opt.dataset, DatasetShape{reference.num_prompt_classes(), reference.vocab_size()});

  const fs::path dir(opt.out_dir);
  ensure_dir(dir);
  RunManifest manifest;
  manifest.command = "train";
  manifest.config = to_json(opt.config);
  manifest.config["dataset"] = opt.dataset;
  manifest.config["reference"] = opt.reference;
  manifest.seeds["shuffle"] = opt.config.shuffle_seed;
  manifest.outputs = {"report.csv", "summary.json", "policy.txt", "timing.json"};
  write_manifest(dir, manifest);

  PolicyTable policy = reference;
  const TrainReport report = train(opt.config, dataset, policy, reference);

  std::ostringstream csv;
  write_report_csv(csv, report);
  write_text(dir / "report.csv", csv.str());
  write_text(dir / "summary.json", report_summary_json(report).dump(2) + "\n");
  save_policy(dir / "policy.txt", policy);
  ordered_json timing;
  timing["wall_clock_seconds"] = report.wall_clock_seconds;
  write_text(dir / "timing.json", timing.dump(2) + "\n");

  out << "steps: " << report.total_steps << '\n'
      << "initial mean loss: " << fmt9(report.steps.front().mean_loss) << '\n'
      << "final mean loss: " << fmt9(report.steps.back().mean_loss) << '\n'
      << "final accuracy: " << fmt9(report.final_metrics.overall_accuracy) << '\n'
      << "wall clock seconds: " << fmt9(report.wall_clock_seconds) << '\n';
  return kOk;
}

// ---------------------------------------------------------------- eval

struct EvalOptions {
  std::string dataset;
  std::string reference;
  std::vector<std::string> policies;
  double beta = 0.01;
  std::string out_dir;
};

int cmd_eval(const EvalOptions& opt, std::ostream& out) {
  if (!(std::isfinite(opt.beta) && opt.beta > 0.0)) throw UsageError("--beta must be > 0");
  const PolicyTable reference = load_policy(opt.reference);
  const auto dataset = load_dataset(
      opt.dataset, DatasetShape{reference.num_prompt_classes(), reference.vocab_size()});
  const auto subgroups = classify_dataset(reference, dataset);
  const auto variants = standard_profile_variants(opt.beta);

  ordered_json result;
  result["dataset"] = opt.dataset;
  result["reference"] = opt.reference;
  result["beta"] = opt.beta;
  result["policies"] = ordered_json::array();
  ordered_json side_by_side = ordered_json::object();

  for (const auto& spec : opt.policies) {
    std::string label;
    std::string path = spec;
    if (const auto eq = spec.find('='); eq != std::string::npos) {
      label = spec.substr(0, eq);
      path = spec.substr(eq + 1);
    } else {
      label = fs::path(spec).stem().string();
    }
    const PolicyTable policy = load_policy(path);
    if (!policy.same_shape(reference))
      throw ConfigError("policy " + path + " has shape " + shape_string(policy) + " but reference " +
                        opt.reference + " has shape " + shape_string(reference));
    ordered_json entry;
    entry["label"] = label;
    entry["path"] = path;
    const auto metrics = to_json(evaluate(policy, reference, dataset, subgroups, opt.beta));
    for (const auto& [key, value] : metrics.items()) entry[key] = value;
    entry["weights"] = profile_to_json(subgroup_weight_profile(policy, reference, dataset, subgroups, variants));
    side_by_side[label] = entry["overall_accuracy"];
    result["policies"].push_back(std::move(entry));
  }
  result["side_by_side_accuracy"] = side_by_side;

  const std::string text = result.dump(2) + "\n";
  if (!opt.out_dir.empty()) {
    const fs::path dir(opt.out_dir);
    ensure_dir(dir);
    RunManifest manifest;
    manifest.command = "eval";
    manifest.config["dataset"] = opt.dataset;
    manifest.config["reference"] = opt.reference;
    manifest.config["policies"] = opt.policies;
    manifest.config["beta"] = opt.beta;
    manifest.outputs = {"metrics.json"};
    write_manifest(dir, manifest);
    write_text(dir / "metrics.json", text);
  }
  out << text;
  return kOk;
}

}  // namespace

ordered_json RunManifest::to_json() const {
  ordered_json j;
  j["command"] = command;
  j["version"] = std::string(kVersion);
  j["config"] = config;
  j["seeds"] = seeds;
  j["outputs"] = outputs;
  return j;
}

void write_manifest(const fs::path& dir, const RunManifest& manifest) {
  write_text(dir / "manifest.json", manifest.to_json().dump(2) + "\n");
}

std::vector<double> parse_grid(std::string_view spec) {
  std::vector<std::string_view> tokens;
  std::size_t start = 0;
  while (true) {
    const auto colon = spec.find(':', start);
    tokens.push_back(spec.substr(start, colon == std::string_view::npos ? spec.npos : colon - start));
    if (colon == std::string_view::npos) break;
    start = colon + 1;
  }
  if (tokens.size() != 3)
    throw UsageError("malformed grid spec '" + std::string(spec) + "': expected min:max:step");
  const double lo = parse_number(tokens[0], spec);
  const double hi = parse_number(tokens[1], spec);
  const double step = parse_number(tokens[2], spec);
  if (!(lo < hi)) throw UsageError("malformed grid spec '" + std::string(spec) + "': min must be < max");
  if (!(step > 0.0))
    throw UsageError("malformed grid spec '" + std::string(spec) + "': bad token '" +
                     std::string(tokens[2]) + "' (step must be > 0)");
  const auto n = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9)) + 1;
  if (n > 10'000'000) throw UsageError("grid spec '" + std::string(spec) + "' has too many points");
  std::vector<double> grid(n);
  for (std::size_t i = 0; i < n; ++i) {
    double v = lo + static_cast<double>(i) * step;
    if (std::abs(v) < 1e-9 * step) v = 0.0;
    grid[i] = v;
  }
  return grid;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Preference-optimization laboratory: DPO and focal preference losses on a tabular policy"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));

  CurvesOptions curves;
  auto* curves_cmd = app.add_subcommand("curves", "Write modulating-factor and gradient-weight curves as CSV");
  curves_cmd->add_option("--gamma", curves.gammas, "Focusing parameters (repeatable)");
  curves_cmd->add_option("--delta-grid", curves.delta_grid, "Margin grid min:max:step");
  curves_cmd->add_option("--p-grid", curves.p_grid, "Probability grid min:max:step");
  curves_cmd->add_option("--out", curves.out_dir, "Output directory")->required();

  SynthOptions synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic preference dataset");
  synth_cmd->add_option("--pairs", synth.config.num_pairs, "Number of pairs (>= 1)");
  synth_cmd->add_option("--classes", synth.config.prompt_classes, "Prompt classes");
  synth_cmd->add_option("--vocab", synth.config.vocab_size, "Vocabulary size");
  synth_cmd->add_option("--length", synth.config.seq_length, "Response length");
  synth_cmd->add_option("--mode", synth.mode, "deterministic or bradley-terry");
  synth_cmd->add_option("--noise", synth.config.noise_rate, "Label flip probability in [0, 1)");
  synth_cmd->add_option("--seed", synth.config.generator_seed, "Generator seed");
  synth_cmd->add_option("--reference-seed", synth.reference_seed, "Reference policy seed");
  synth_cmd->add_option("--reward-seed", synth.reward_seed, "True reward model seed");
  synth_cmd->add_option("--holdout", synth.holdout, "Held-out fraction in [0, 1)");
  synth_cmd->add_option("--split-seed", synth.split_seed, "Held-out split seed");
  synth_cmd->add_option("--out", synth.out_dir, "Output directory")->required();

  TrainOptions trainopt;
  auto* train_cmd = app.add_subcommand("train", "Train a policy on a preference dataset");
  train_cmd->add_option("--dataset", trainopt.dataset, "Dataset JSONL")->required();
  train_cmd->add_option("--reference", trainopt.reference, "Reference policy file")->required();
  train_cmd->add_option("--loss", trainopt.loss, "dpo, focal, focal-exact or focus-incorrect");
  train_cmd->add_option("--beta", trainopt.config.loss.beta, "Implicit-reward temperature");
  auto* gamma_opt = train_cmd->add_option("--gamma", trainopt.config.loss.gamma, "Focusing parameter");
  train_cmd->add_option("--lr", trainopt.config.learning_rate, "Learning rate");
  train_cmd->add_option("--batch", trainopt.config.batch_size, "Batch size");
  train_cmd->add_option("--epochs", trainopt.config.num_epochs, "Epochs");
  train_cmd->add_option("--optimizer", trainopt.optimizer, "adam or sgd");
  train_cmd->add_option("--adam-beta1", trainopt.config.optimizer.beta1, "Adam beta1");
  train_cmd->add_option("--adam-beta2", trainopt.config.optimizer.beta2, "Adam beta2");
  train_cmd->add_option("--adam-eps", trainopt.config.optimizer.epsilon, "Adam epsilon");
  train_cmd->add_option("--shuffle-seed", trainopt.config.shuffle_seed, "Shuffle seed");
  train_cmd->add_option("--eval-every", trainopt.config.eval_every, "Steps between evaluations");
  train_cmd->add_option("--out", trainopt.out_dir, "Output directory")->required();

  EvalOptions evalopt;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate policies against a reference on a dataset");
  eval_cmd->add_option("--dataset", evalopt.dataset, "Dataset JSONL")->required();
  eval_cmd->add_option("--reference", evalopt.reference, "Reference policy file")->required();
  eval_cmd->add_option("--policy", evalopt.policies, "Policy file, optionally label=path (repeatable)")
      ->required();
  eval_cmd->add_option("--beta", evalopt.beta, "Implicit-reward temperature");
  eval_cmd->add_option("--out", evalopt.out_dir, "Optional directory for manifest and metrics.json");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << '\n';
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsageError;
  }

  try {
    if (*curves_cmd) return cmd_curves(curves, out);
    if (*synth_cmd) return cmd_synth(synth, out);
    if (*train_cmd) {
      trainopt.gamma_given = gamma_opt->count() > 0;
      return cmd_train(trainopt, out);
    }
    if (*eval_cmd) return cmd_eval(evalopt, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsageError;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kRuntimeError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return kUsageError;
}

}  // namespace focalpo::cli
