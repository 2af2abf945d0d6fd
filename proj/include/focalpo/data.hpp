#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "focalpo/policy.hpp"
#include "focalpo/types.hpp"

namespace focalpo {

/// Latent bag-of-tokens reward: r*(c, y) = sum_t weights[c][y_t].
class TrueRewardModel {
 public:
  /// All-zero weights.
  TrueRewardModel(int num_prompt_classes, int vocab_size);
  static TrueRewardModel random_normal(int num_prompt_classes, int vocab_size, std::uint64_t seed);

  int num_prompt_classes() const noexcept { return classes_; }
  int vocab_size() const noexcept { return vocab_; }
  double& weight(int prompt_class, Token token);
  double weight(int prompt_class, Token token) const;

 private:
  int classes_;
  int vocab_;
  std::vector<double> weights_;
};

/// Throws ConfigError when the sequence does not fit the model shape.
double true_reward(const TrueRewardModel& model, const TokenSequence& seq);

enum class LabelingMode { Deterministic, BradleyTerry };

std::string_view to_string(LabelingMode mode) noexcept;
std::optional<LabelingMode> parse_labeling_mode(std::string_view name) noexcept;

struct SynthConfig {
  std::size_t num_pairs = 500;
  int prompt_classes = 4;
  int vocab_size = 8;
  int seq_length = 4;
  LabelingMode labeling_mode = LabelingMode::Deterministic;
  double noise_rate = 0.1;  // probability of swapping the label after labeling
  std::uint64_t generator_seed = 1;

  void validate() const;
};

/// Draw `num_pairs` comparisons from `sampler`. For each pair: a uniform prompt
/// class, two distinct sampled responses (up to 100 redraws), a label from the
/// true reward (deterministic, or Bernoulli(sigmoid(r_a - r_b))), then a label
/// swap with probability noise_rate.
std::vector<PreferencePair> synthesize_dataset(const SynthConfig& config,
                                               const TrueRewardModel& reward,
                                               const PolicyTable& sampler);

/// CorrectAtInit iff the reference assigns the chosen response strictly higher
/// log-probability. Ties count as IncorrectAtInit.
Subgroup classify_pair(const PolicyTable& reference, const PreferencePair& pair);
std::vector<Subgroup> classify_dataset(const PolicyTable& reference,
                                       std::span<const PreferencePair> pairs);

struct DatasetCensus {
  std::size_t num_pairs = 0;
  std::size_t flipped = 0;
  std::size_t misordered = 0;  // true_reward_chosen < true_reward_rejected
  std::size_t correct_at_init = 0;
  std::size_t incorrect_at_init = 0;

  double flipped_fraction() const noexcept;
  double misordered_fraction() const noexcept;
  /// The true reward still agrees with the majority of labels.
  bool learnable() const noexcept { return misordered_fraction() < 0.5; }
};

DatasetCensus census(const PolicyTable& reference, std::span<const PreferencePair> pairs);

struct DatasetSplit {
  std::vector<PreferencePair> train;
  std::vector<PreferencePair> heldout;
};

/// Seeded random split; each side keeps the original pair order.
DatasetSplit split_dataset(std::span<const PreferencePair> pairs, double heldout_fraction,
                           std::uint64_t seed);

/// Shape used to range-check loaded pairs.
struct DatasetShape {
  int prompt_classes = 0;
  int vocab_size = 0;
};

// JSONL: one object per line with exactly the keys pair_id, prompt_class,
// chosen, rejected, true_reward_chosen, true_reward_rejected, label_flipped.
void write_dataset_jsonl(std::ostream& out, std::span<const PreferencePair> pairs);
/// Throws ParseError for malformed lines and ValidationError for values out of
/// range; both carry the line number.
std::vector<PreferencePair> read_dataset_jsonl(std::istream& in,
                                               std::optional<DatasetShape> shape = std::nullopt);
void save_dataset(const std::filesystem::path& path, std::span<const PreferencePair> pairs);
std::vector<PreferencePair> load_dataset(const std::filesystem::path& path,
                                         std::optional<DatasetShape> shape = std::nullopt);

}  // namespace focalpo
