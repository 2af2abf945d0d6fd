#include "focalpo/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <string>

#include "json.hpp"

#include "focalpo/errors.hpp"
#include "focalpo/numerics.hpp"
#include "rng.hpp"

namespace focalpo {

using nlohmann::ordered_json;

TrueRewardModel::TrueRewardModel(int num_prompt_classes, int vocab_size)
    : classes_(num_prompt_classes), vocab_(vocab_size) {
  if (num_prompt_classes <= 0 || vocab_size <= 0)
    throw ConfigError("reward model needs positive class count and vocabulary size");
  weights_.assign(static_cast<std::size_t>(classes_) * static_cast<std::size_t>(vocab_), 0.0);
}

TrueRewardModel TrueRewardModel::random_normal(int num_prompt_classes, int vocab_size,
                                               std::uint64_t seed) {
  TrueRewardModel model(num_prompt_classes, vocab_size);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& w : model.weights_) w = normal(rng);
  return model;
}

double& TrueRewardModel::weight(int prompt_class, Token token) {
  if (prompt_class < 0 || prompt_class >= classes_ || token < 0 || token >= vocab_)
    throw ConfigError("reward index (" + std::to_string(prompt_class) + ", " +
                      std::to_string(token) + ") outside model shape");
  return weights_[static_cast<std::size_t>(prompt_class) * vocab_ + token];
}

double TrueRewardModel::weight(int prompt_class, Token token) const {
  return const_cast<TrueRewardModel*>(this)->weight(prompt_class, token);
}

double true_reward(const TrueRewardModel& model, const TokenSequence& seq) {
  double total = 0.0;
  for (Token t : seq.tokens) total += model.weight(seq.prompt_class, t);
  return total;
}

std::string_view to_string(LabelingMode mode) noexcept {
  return mode == LabelingMode::Deterministic ? "deterministic" : "bradley-terry";
}

std::optional<LabelingMode> parse_labeling_mode(std::string_view name) noexcept {
  if (name == "deterministic") return LabelingMode::Deterministic;
  if (name == "bradley-terry" || name == "bradley_terry") return LabelingMode::BradleyTerry;
  return std::nullopt;
}

void SynthConfig::validate() const {
  if (num_pairs < 1) throw ConfigError("num_pairs must be >= 1");
  if (prompt_classes < 1) throw ConfigError("prompt_classes must be >= 1");
  if (vocab_size < 1) throw ConfigError("vocab_size must be >= 1");
  if (seq_length < 1) throw ConfigError("seq_length must be >= 1");
  if (!(noise_rate >= 0.0 && noise_rate < 1.0)) throw ConfigError("noise_rate must lie in [0, 1)");
}

std::vector<PreferencePair> synthesize_dataset(const SynthConfig& config,
                                               const TrueRewardModel& reward,
                                               const PolicyTable& sampler) {
  config.validate();
  if (sampler.num_prompt_classes() != config.prompt_classes ||
      sampler.vocab_size() != config.vocab_size)
    throw ConfigError("sampler shape does not match synth config");
  if (reward.num_prompt_classes() != config.prompt_classes ||
      reward.vocab_size() != config.vocab_size)
    throw ConfigError("reward model shape does not match synth config");

  constexpr int kMaxRedraws = 100;
  std::mt19937_64 rng(config.generator_seed);
  std::vector<PreferencePair> pairs;
  pairs.reserve(config.num_pairs);

  for (std::size_t i = 0; i < config.num_pairs; ++i) {
    const int c = static_cast<int>(
        detail::uniform_index(rng, static_cast<std::uint64_t>(config.prompt_classes)));
    TokenSequence a = sample_sequence(sampler, c, config.seq_length, rng());
    TokenSequence b = sample_sequence(sampler, c, config.seq_length, rng());
    for (int redraw = 0; b == a; ++redraw) {
      if (redraw == kMaxRedraws)
        throw GenerationError("could not draw two distinct responses for pair " +
                              std::to_string(i) + " after 100 redraws");
      b = sample_sequence(sampler, c, config.seq_length, rng());
    }
    const double ra = true_reward(reward, a);
    const double rb = true_reward(reward, b);

    bool a_wins = false;
    if (config.labeling_mode == LabelingMode::Deterministic) {
      a_wins = ra >= rb;
    } else {
      a_wins = detail::uniform01(rng) < sigmoid(ra - rb).value();
    }
    const bool flip = detail::uniform01(rng) < config.noise_rate;
    if (flip) a_wins = !a_wins;

    PreferencePair pair;
    pair.pair_id = i;
    pair.prompt_class = c;
    pair.chosen = a_wins ? a.tokens : b.tokens;
    pair.rejected = a_wins ? b.tokens : a.tokens;
    pair.true_reward_chosen = a_wins ? ra : rb;
    pair.true_reward_rejected = a_wins ? rb : ra;
    pair.label_flipped = flip;
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

Subgroup classify_pair(const PolicyTable& reference, const PreferencePair& pair) {
  if (pair.prompt_class < 0 || pair.prompt_class >= reference.num_prompt_classes())
    throw ConfigError("pair " + std::to_string(pair.pair_id) + " prompt class outside reference shape");
  for (const auto* tokens : {&pair.chosen, &pair.rejected})
    for (Token t : *tokens)
      if (t < 0 || t >= reference.vocab_size())
        throw ConfigError("pair " + std::to_string(pair.pair_id) + " token outside reference vocabulary");
  const double chosen = sequence_log_prob(reference, pair.chosen_sequence());
  const double rejected = sequence_log_prob(reference, pair.rejected_sequence());
  return chosen > rejected ? Subgroup::CorrectAtInit : Subgroup::IncorrectAtInit;
}

std::vector<Subgroup> classify_dataset(const PolicyTable& reference,
                                       std::span<const PreferencePair> pairs) {
  std::vector<Subgroup> out;
  out.reserve(pairs.size());
  for (const auto& pair : pairs) out.push_back(classify_pair(reference, pair));
  return out;
}

double DatasetCensus::flipped_fraction() const noexcept {
  return num_pairs ? static_cast<double>(flipped) / static_cast<double>(num_pairs) : 0.0;
}

double DatasetCensus::misordered_fraction() const noexcept {
  return num_pairs ? static_cast<double>(misordered) / static_cast<double>(num_pairs) : 0.0;
}

DatasetCensus census(const PolicyTable& reference, std::span<const PreferencePair> pairs) {
  DatasetCensus out;
  out.num_pairs = pairs.size();
  for (const auto& pair : pairs) {
    if (pair.label_flipped) ++out.flipped;
    if (pair.true_reward_chosen < pair.true_reward_rejected) ++out.misordered;
    if (classify_pair(reference, pair) == Subgroup::CorrectAtInit)
      ++out.correct_at_init;
    else
      ++out.incorrect_at_init;
  }
  return out;
}

DatasetSplit split_dataset(std::span<const PreferencePair> pairs, double heldout_fraction,
                           std::uint64_t seed) {
  if (!(heldout_fraction >= 0.0 && heldout_fraction < 1.0))
    throw ConfigError("held-out fraction must lie in [0, 1)");
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[detail::uniform_index(rng, i)]);

  const auto n_heldout =
      static_cast<std::size_t>(std::llround(heldout_fraction * static_cast<double>(pairs.size())));
  std::vector<bool> is_heldout(pairs.size(), false);
  for (std::size_t i = 0; i < n_heldout; ++i) is_heldout[order[i]] = true;

  DatasetSplit split;
  for (std::size_t i = 0; i < pairs.size(); ++i)
    (is_heldout[i] ? split.heldout : split.train).push_back(pairs[i]);
  return split;
}

void write_dataset_jsonl(std::ostream& out, std::span<const PreferencePair> pairs) {
  for (const auto& pair : pairs) {
    ordered_json obj;
    obj["pair_id"] = pair.pair_id;
    obj["prompt_class"] = pair.prompt_class;
    obj["chosen"] = pair.chosen;
    obj["rejected"] = pair.rejected;
    obj["true_reward_chosen"] = pair.true_reward_chosen;
    obj["true_reward_rejected"] = pair.true_reward_rejected;
    obj["label_flipped"] = pair.label_flipped;
    out << obj.dump() << '\n';
  }
}

namespace {

constexpr std::string_view kFields[] = {"pair_id",           "prompt_class",         "chosen",
                                        "rejected",          "true_reward_chosen",   "true_reward_rejected",
                                        "label_flipped"};

std::vector<Token> read_tokens(const ordered_json& value, std::size_t line, const char* field) {
  if (!value.is_array()) throw ParseError(line, std::string(field) + " must be an array of integers");
  std::vector<Token> tokens;
  tokens.reserve(value.size());
  for (const auto& t : value) {
    if (!t.is_number_integer()) throw ParseError(line, std::string(field) + " must be an array of integers");
    const auto v = t.get<long long>();
    if (v < 0 || v > INT32_MAX) throw ValidationError(line, std::string(field) + " token " + std::to_string(v) + " out of range");
    tokens.push_back(static_cast<Token>(v));
  }
  return tokens;
}

double read_real(const ordered_json& value, std::size_t line, const char* field) {
  if (!value.is_number()) throw ParseError(line, std::string(field) + " must be a number");
  const double v = value.get<double>();
  if (!std::isfinite(v)) throw ValidationError(line, std::string(field) + " must be finite");
  return v;
}

PreferencePair parse_pair(const std::string& text, std::size_t line,
                          const std::optional<DatasetShape>& shape) {
  ordered_json obj;
  try {
    obj = ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(line, std::string("invalid JSON: ") + e.what());
  }
  if (!obj.is_object()) throw ParseError(line, "expected a JSON object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (std::find(std::begin(kFields), std::end(kFields), it.key()) == std::end(kFields))
      throw ParseError(line, "unexpected field '" + it.key() + "'");
  }
  for (auto field : kFields) {
    if (!obj.contains(std::string(field))) throw ParseError(line, "missing field '" + std::string(field) + "'");
  }

  PreferencePair pair;
  const auto& id = obj["pair_id"];
  if (!id.is_number_unsigned() && !(id.is_number_integer() && id.get<long long>() >= 0))
    throw ParseError(line, "pair_id must be a non-negative integer");
  pair.pair_id = id.get<std::uint64_t>();
  const auto& cls = obj["prompt_class"];
  if (!cls.is_number_integer()) throw ParseError(line, "prompt_class must be an integer");
  const auto c = cls.get<long long>();
  if (c < 0 || c > INT32_MAX) throw ValidationError(line, "prompt_class out of range");
  pair.prompt_class = static_cast<int>(c);
  pair.chosen = read_tokens(obj["chosen"], line, "chosen");
  pair.rejected = read_tokens(obj["rejected"], line, "rejected");
  pair.true_reward_chosen = read_real(obj["true_reward_chosen"], line, "true_reward_chosen");
  pair.true_reward_rejected = read_real(obj["true_reward_rejected"], line, "true_reward_rejected");
  if (!obj["label_flipped"].is_boolean()) throw ParseError(line, "label_flipped must be a boolean");
  pair.label_flipped = obj["label_flipped"].get<bool>();

  if (pair.chosen.empty() || pair.rejected.empty())
    throw ValidationError(line, "chosen and rejected must be non-empty");
  if (pair.chosen.size() != pair.rejected.size())
    throw ValidationError(line, "chosen and rejected lengths differ");
  if (pair.chosen == pair.rejected) throw ValidationError(line, "chosen and rejected are identical");
  if (shape) {
    if (pair.prompt_class >= shape->prompt_classes)
      throw ValidationError(line, "prompt_class " + std::to_string(pair.prompt_class) +
                                      " outside [0, " + std::to_string(shape->prompt_classes) + ")");
    for (const auto* tokens : {&pair.chosen, &pair.rejected})
      for (Token t : *tokens)
        if (t >= shape->vocab_size)
          throw ValidationError(line, "token " + std::to_string(t) + " outside [0, " +
                                          std::to_string(shape->vocab_size) + ")");
  }
  return pair;
}

}  // namespace

std::vector<PreferencePair> read_dataset_jsonl(std::istream& in, std::optional<DatasetShape> shape) {
  std::vector<PreferencePair> pairs;
  std::string text;
  std::size_t line = 0;
  std::size_t expected_length = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.empty()) {
      if (in.peek() == std::char_traits<char>::eof()) break;
      throw ParseError(line, "blank line");
    }
    PreferencePair pair = parse_pair(text, line, shape);
    if (pairs.empty()) expected_length = pair.chosen.size();
    else if (pair.chosen.size() != expected_length)
      throw ValidationError(line, "sequence length differs from the rest of the dataset");
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

void save_dataset(const std::filesystem::path& path, std::span<const PreferencePair> pairs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_dataset_jsonl(out, pairs);
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<PreferencePair> load_dataset(const std::filesystem::path& path,
                                         std::optional<DatasetShape> shape) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_dataset_jsonl(in, shape);
}

}  // namespace focalpo
