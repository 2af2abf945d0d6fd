#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <vector>

#include "focalpo/numerics.hpp"
#include "focalpo/types.hpp"

namespace focalpo {

/// Per-prompt-class bigram policy. Contexts are (prompt_class, previous token);
/// previous-token index V is the begin-of-sequence marker. Each context holds V
/// next-token logits, stored contiguously.
class PolicyTable {
 public:
  /// All-zero (uniform) table. Throws ConfigError for non-positive sizes.
  PolicyTable(int num_prompt_classes, int vocab_size);

  /// Logits drawn i.i.d. from N(0, 1) with a fixed seed.
  static PolicyTable random_normal(int num_prompt_classes, int vocab_size, std::uint64_t seed);

  int num_prompt_classes() const noexcept { return classes_; }
  int vocab_size() const noexcept { return vocab_; }
  int bos() const noexcept { return vocab_; }
  std::size_t num_contexts() const noexcept {
    return static_cast<std::size_t>(classes_) * static_cast<std::size_t>(vocab_ + 1);
  }

  /// Flat context index; throws IndexError when (c, prev) is out of range.
  std::size_t context_index(int prompt_class, int previous) const;

  std::span<const double> context_logits(std::size_t context) const;
  std::span<double> context_logits(std::size_t context);
  std::span<const double> logits(int prompt_class, int previous) const {
    return context_logits(context_index(prompt_class, previous));
  }
  std::span<double> logits(int prompt_class, int previous) {
    return context_logits(context_index(prompt_class, previous));
  }

  std::span<const double> data() const noexcept { return logits_; }
  std::span<double> data() noexcept { return logits_; }

  /// Log-softmax of one context, via max-subtracted log-sum-exp.
  std::vector<double> log_softmax(std::size_t context) const;

  bool same_shape(const PolicyTable& other) const noexcept {
    return classes_ == other.classes_ && vocab_ == other.vocab_;
  }

  /// FNV-1a over the raw logit bytes.
  std::uint64_t checksum() const noexcept;

  friend bool operator==(const PolicyTable&, const PolicyTable&) = default;

 private:
  int classes_;
  int vocab_;
  std::vector<double> logits_;
};

/// Sparse gradient with respect to policy logits: only contexts visited by a
/// sequence have an entry.
class GradTable {
 public:
  explicit GradTable(int vocab_size) : vocab_(vocab_size) {}

  int vocab_size() const noexcept { return vocab_; }
  const std::map<std::size_t, std::vector<double>>& entries() const noexcept { return entries_; }

  /// Entry row for a context, created as zeros on first access.
  std::vector<double>& row(std::size_t context);
  /// Value or 0 when the context is absent.
  double at(std::size_t context, int token) const;

  /// this += scale * other
  void add_scaled(const GradTable& other, double scale);

 private:
  int vocab_;
  std::map<std::size_t, std::vector<double>> entries_;
};

/// Sum over steps of log softmax(logits[c][prev_t])[tokens[t]], prev_0 = BOS.
double sequence_log_prob(const PolicyTable& policy, const TokenSequence& seq);

/// d sequence_log_prob / d logits: 1{k = token} - softmax_k per step, summed
/// over steps that share a context.
GradTable sequence_log_prob_grad(const PolicyTable& policy, const TokenSequence& seq);

/// beta * (log pi(seq) - log pi_ref(seq)). Throws ConfigError on shape mismatch.
double implicit_reward(const PolicyTable& policy, const PolicyTable& reference,
                       const TokenSequence& seq, double beta);

/// implicit_reward(chosen) - implicit_reward(rejected).
Margin pair_margin(const PolicyTable& policy, const PolicyTable& reference,
                   const PreferencePair& pair, double beta);

/// Ancestral sample of `length` tokens. Deterministic in `seed`.
TokenSequence sample_sequence(const PolicyTable& policy, int prompt_class, int length,
                              std::uint64_t seed);

// Text format: a header line "C V", then C*(V+1) lines (context order) of V
// logits written with 17 significant digits.
void write_policy_text(std::ostream& out, const PolicyTable& policy);
PolicyTable read_policy_text(std::istream& in);
void save_policy(const std::filesystem::path& path, const PolicyTable& policy);
PolicyTable load_policy(const std::filesystem::path& path);

}  // namespace focalpo
