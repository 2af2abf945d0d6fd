#pragma once

#include <cstdint>
#include <vector>

namespace focalpo {

using Token = int;

/// A response conditioned on one prompt class.
struct TokenSequence {
  int prompt_class = 0;
  std::vector<Token> tokens;

  friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

/// One labelled comparison. `label_flipped` records injected label noise.
struct PreferencePair {
  std::uint64_t pair_id = 0;
  int prompt_class = 0;
  std::vector<Token> chosen;
  std::vector<Token> rejected;
  double true_reward_chosen = 0.0;
  double true_reward_rejected = 0.0;
  bool label_flipped = false;

  TokenSequence chosen_sequence() const { return {prompt_class, chosen}; }
  TokenSequence rejected_sequence() const { return {prompt_class, rejected}; }

  friend bool operator==(const PreferencePair&, const PreferencePair&) = default;
};

/// Whether the frozen reference ranks the chosen response above the rejected one.
enum class Subgroup { CorrectAtInit, IncorrectAtInit };

inline const char* to_string(Subgroup g) noexcept {
  return g == Subgroup::CorrectAtInit ? "correct_at_init" : "incorrect_at_init";
}

}  // namespace focalpo
