#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "focalpo/data.hpp"
#include "focalpo/errors.hpp"
#include "test_helpers.hpp"

using namespace focalpo;

namespace {

SynthConfig small_config() {
  SynthConfig c;
  c.num_pairs = 400;
  c.noise_rate = 0.0;
  c.generator_seed = 5;
  return c;
}

std::string to_jsonl(const std::vector<PreferencePair>& pairs) {
  std::ostringstream out;
  write_dataset_jsonl(out, pairs);
  return out.str();
}

}  // namespace

TEST(TrueReward, Values) {
  TrueRewardModel zero(2, 4);
  EXPECT_EQ(true_reward(zero, {1, {0, 3, 2}}), 0.0);

  TrueRewardModel m(1, 4);
  for (int v = 0; v < 4; ++v) m.weight(0, v) = v + 1.0;
  EXPECT_EQ(true_reward(m, {0, {0, 0, 3}}), 6.0);
  EXPECT_THROW(true_reward(m, {0, {4}}), ConfigError);
  EXPECT_THROW(true_reward(m, {1, {0}}), ConfigError);
}

TEST(TrueReward, PermutationInvariant) {
  const auto m = TrueRewardModel::random_normal(3, 6, 8);
  TokenSequence seq{2, {5, 1, 1, 4, 0}};
  const double r = true_reward(m, seq);
  std::mt19937_64 rng(1);
  for (int i = 0; i < 10; ++i) {
    std::shuffle(seq.tokens.begin(), seq.tokens.end(), rng);
    EXPECT_NEAR(true_reward(m, seq), r, 1e-14);
  }
}

TEST(Synthesize, DeterministicLabelsRespectTrueReward) {
  const auto cfg = small_config();
  const auto ref = PolicyTable::random_normal(cfg.prompt_classes, cfg.vocab_size, 7);
  const auto reward = TrueRewardModel::random_normal(cfg.prompt_classes, cfg.vocab_size, 11);
  const auto pairs = synthesize_dataset(cfg, reward, ref);
  ASSERT_EQ(pairs.size(), cfg.num_pairs);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& p = pairs[i];
    EXPECT_EQ(p.pair_id, i);
    EXPECT_GE(p.true_reward_chosen, p.true_reward_rejected);
    EXPECT_FALSE(p.label_flipped);
    EXPECT_NE(p.chosen, p.rejected);
    EXPECT_EQ(p.chosen.size(), 4u);
    EXPECT_EQ(p.rejected.size(), 4u);
    EXPECT_EQ(p.true_reward_chosen, true_reward(reward, p.chosen_sequence()));
  }
}

TEST(Synthesize, SameSeedSameBytes) {
  auto cfg = small_config();
  cfg.noise_rate = 0.2;
  cfg.labeling_mode = LabelingMode::BradleyTerry;
  const auto ref = PolicyTable::random_normal(cfg.prompt_classes, cfg.vocab_size, 7);
  const auto reward = TrueRewardModel::random_normal(cfg.prompt_classes, cfg.vocab_size, 11);
  EXPECT_EQ(to_jsonl(synthesize_dataset(cfg, reward, ref)), to_jsonl(synthesize_dataset(cfg, reward, ref)));
  cfg.generator_seed += 1;
  EXPECT_NE(to_jsonl(synthesize_dataset(cfg, reward, ref)), to_jsonl(synthesize_dataset(small_config(), reward, ref)));
}

TEST(Synthesize, BradleyTerryMatchesSigmoidOfGap) {
  // V = 2, L = 1 with weights {0, 1}: every pair is {[0], [1]} with gap 1.
  SynthConfig cfg;
  cfg.num_pairs = 50000;
  cfg.prompt_classes = 1;
  cfg.vocab_size = 2;
  cfg.seq_length = 1;
  cfg.labeling_mode = LabelingMode::BradleyTerry;
  cfg.noise_rate = 0.0;
  cfg.generator_seed = 99;
  TrueRewardModel reward(1, 2);
  reward.weight(0, 1) = 1.0;
  const auto pairs = synthesize_dataset(cfg, reward, PolicyTable(1, 2));
  std::size_t consistent = 0;
  for (const auto& p : pairs) consistent += p.true_reward_chosen > p.true_reward_rejected;
  EXPECT_NEAR(static_cast<double>(consistent) / cfg.num_pairs, 0.7310585786300049, 0.01);
}

TEST(Synthesize, NoiseFlipsMatchMisorderedPairs) {
  SynthConfig cfg;
  cfg.num_pairs = 10000;
  cfg.noise_rate = 0.15;
  cfg.generator_seed = 1234;
  const auto ref = PolicyTable::random_normal(4, 8, 7);
  const auto reward = TrueRewardModel::random_normal(4, 8, 11);
  const auto pairs = synthesize_dataset(cfg, reward, ref);
  std::size_t misordered = 0;
  std::size_t flipped_strict = 0;
  std::size_t flipped = 0;
  for (const auto& p : pairs) {
    misordered += p.true_reward_chosen < p.true_reward_rejected;
    flipped += p.label_flipped;
    flipped_strict += p.label_flipped && p.true_reward_chosen != p.true_reward_rejected;
  }
  EXPECT_EQ(misordered, flipped_strict);
  const double n = static_cast<double>(cfg.num_pairs);
  const double sigma = std::sqrt(0.15 * 0.85 / n);
  EXPECT_NEAR(flipped / n, 0.15, 3 * sigma);
}

TEST(Synthesize, Errors) {
  auto cfg = small_config();
  const auto reward = TrueRewardModel::random_normal(4, 8, 11);
  EXPECT_THROW(synthesize_dataset(cfg, reward, PolicyTable(4, 7)), ConfigError);
  cfg.num_pairs = 0;
  EXPECT_THROW(synthesize_dataset(cfg, reward, PolicyTable(4, 8)), ConfigError);
  cfg = small_config();
  cfg.noise_rate = 1.0;
  EXPECT_THROW(synthesize_dataset(cfg, reward, PolicyTable(4, 8)), ConfigError);

  // A saturated sampler can only produce one sequence.
  SynthConfig tiny;
  tiny.num_pairs = 1;
  tiny.prompt_classes = 1;
  tiny.vocab_size = 2;
  tiny.seq_length = 1;
  PolicyTable stuck(1, 2);
  stuck.logits(0, stuck.bos())[0] = 200.0;
  EXPECT_THROW(synthesize_dataset(tiny, TrueRewardModel(1, 2), stuck), GenerationError);
}

TEST(ClassifyPair, UniformReferenceTiesAreIncorrect) {
  std::mt19937_64 rng(6);
  PolicyTable uniform(3, 5);
  for (int i = 0; i < 100; ++i) {
    const auto pair = focalpo::testing::random_pair(rng, i, 3, 5, 4);
    EXPECT_EQ(classify_pair(uniform, pair), Subgroup::IncorrectAtInit);
  }
}

TEST(ClassifyPair, ConstructedOrdering) {
  PolicyTable ref(1, 3);
  for (int prev = 0; prev <= 3; ++prev) ref.logits(0, prev)[2] = 4.0;
  PreferencePair pair{0, 0, {2, 2}, {0, 1}, 0, 0, false};
  EXPECT_EQ(classify_pair(ref, pair), Subgroup::CorrectAtInit);
  std::swap(pair.chosen, pair.rejected);
  EXPECT_EQ(classify_pair(ref, pair), Subgroup::IncorrectAtInit);
  EXPECT_THROW(classify_pair(PolicyTable(1, 2), pair), ConfigError);
}

TEST(ClassifyPair, AgreesWithChainProducts) {
  std::mt19937_64 rng(8);
  const auto ref = PolicyTable::random_normal(4, 8, 21);
  std::size_t correct = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto pair = focalpo::testing::random_pair(rng, i, 4, 8, 4);
    auto chain = [&](const std::vector<Token>& tokens) {
      double prob = 1.0;
      int prev = ref.bos();
      for (Token t : tokens) {
        const auto row = ref.logits(pair.prompt_class, prev);
        double z = 0.0;
        for (double x : row) z += std::exp(x);
        prob *= std::exp(row[t]) / z;
        prev = t;
      }
      return prob;
    };
    const bool expected = chain(pair.chosen) > chain(pair.rejected);
    EXPECT_EQ(classify_pair(ref, pair) == Subgroup::CorrectAtInit, expected) << i;
    correct += expected;
  }
  EXPECT_GT(correct, 100u);
  EXPECT_LT(correct, 900u);
}

TEST(ClassifyPair, IndependentOfBeta) {
  // Subgroup labels only read the reference; the same labels come back
  // whatever beta the caller trains with, because classify_pair takes none.
  std::mt19937_64 rng(2);
  const auto ref = PolicyTable::random_normal(2, 4, 3);
  auto policy = ref;
  for (double& x : policy.data()) x += 1.0;
  for (int i = 0; i < 50; ++i) {
    const auto pair = focalpo::testing::random_pair(rng, i, 2, 4, 3);
    const Subgroup g = classify_pair(ref, pair);
    for (double beta : {0.001, 0.01, 1.0}) {
      (void)pair_margin(policy, ref, pair, beta);
      EXPECT_EQ(classify_pair(ref, pair), g);
    }
  }
}

TEST(Census, CountsAndLearnability) {
  auto cfg = small_config();
  cfg.noise_rate = 0.1;
  const auto ref = PolicyTable::random_normal(4, 8, 7);
  const auto pairs = synthesize_dataset(cfg, TrueRewardModel::random_normal(4, 8, 11), ref);
  const auto cs = census(ref, pairs);
  EXPECT_EQ(cs.num_pairs, pairs.size());
  EXPECT_EQ(cs.correct_at_init + cs.incorrect_at_init, pairs.size());
  EXPECT_LE(cs.misordered, cs.flipped);
  EXPECT_TRUE(cs.learnable());
}

TEST(Split, PartitionsDeterministically) {
  std::mt19937_64 rng(1);
  std::vector<PreferencePair> pairs;
  for (int i = 0; i < 100; ++i) pairs.push_back(focalpo::testing::random_pair(rng, i, 2, 4, 3));
  const auto a = split_dataset(pairs, 0.2, 9);
  const auto b = split_dataset(pairs, 0.2, 9);
  EXPECT_EQ(a.heldout, b.heldout);
  EXPECT_EQ(a.heldout.size(), 20u);
  EXPECT_EQ(a.train.size(), 80u);
  std::vector<bool> seen(100, false);
  for (const auto* side : {&a.train, &a.heldout}) {
    for (std::size_t i = 1; i < side->size(); ++i) EXPECT_LT((*side)[i - 1].pair_id, (*side)[i].pair_id);
    for (const auto& p : *side) {
      EXPECT_FALSE(seen[p.pair_id]);
      seen[p.pair_id] = true;
    }
  }
  EXPECT_THROW(split_dataset(pairs, 1.0, 1), ConfigError);
}

TEST(Jsonl, RoundTripIsExact) {
  auto cfg = small_config();
  cfg.noise_rate = 0.3;
  cfg.labeling_mode = LabelingMode::BradleyTerry;
  const auto ref = PolicyTable::random_normal(4, 8, 7);
  const auto pairs = synthesize_dataset(cfg, TrueRewardModel::random_normal(4, 8, 11), ref);
  std::stringstream ss(to_jsonl(pairs));
  const auto back = read_dataset_jsonl(ss, DatasetShape{4, 8});
  EXPECT_EQ(back, pairs);
  EXPECT_EQ(to_jsonl(back), to_jsonl(pairs));
}

TEST(Jsonl, ExactFieldLayout) {
  const std::vector<PreferencePair> pairs{{3, 1, {0, 2}, {1, 1}, 0.5, -1.25, true}};
  EXPECT_EQ(to_jsonl(pairs),
            "{\"pair_id\":3,\"prompt_class\":1,\"chosen\":[0,2],\"rejected\":[1,1],"
            "\"true_reward_chosen\":0.5,\"true_reward_rejected\":-1.25,\"label_flipped\":true}\n");
}

TEST(Jsonl, EmptyDataset) {
  const auto dir = focalpo::testing::temp_dir("jsonl_empty");
  save_dataset(dir / "empty.jsonl", {});
  EXPECT_EQ(focalpo::testing::read_file(dir / "empty.jsonl"), "");
  EXPECT_TRUE(load_dataset(dir / "empty.jsonl").empty());
}

TEST(Jsonl, ErrorsCarryLineNumbers) {
  const std::string good =
      "{\"pair_id\":0,\"prompt_class\":0,\"chosen\":[0,1],\"rejected\":[1,0],"
      "\"true_reward_chosen\":1,\"true_reward_rejected\":0,\"label_flipped\":false}\n";
  auto expect_line = [](const std::string& text, std::size_t line, bool validation) {
    std::istringstream in(text);
    try {
      read_dataset_jsonl(in, DatasetShape{2, 4});
      ADD_FAILURE() << "no error for: " << text;
    } catch (const ValidationError& e) {
      EXPECT_TRUE(validation) << e.what();
      EXPECT_EQ(e.line(), line) << e.what();
    } catch (const ParseError& e) {
      EXPECT_FALSE(validation) << e.what();
      EXPECT_EQ(e.line(), line) << e.what();
    }
  };
  // token index == V
  expect_line(good + "{\"pair_id\":1,\"prompt_class\":0,\"chosen\":[0,4],\"rejected\":[1,0],"
                     "\"true_reward_chosen\":1,\"true_reward_rejected\":0,\"label_flipped\":false}\n",
              2, true);
  expect_line(good + good + "{not json}\n", 3, false);
  expect_line("# header\n" + good, 1, false);
  expect_line(good + "\n" + good, 2, false);
  expect_line("{\"pair_id\":0,\"prompt_class\":0,\"chosen\":[0,1],\"rejected\":[1,0],"
              "\"true_reward_chosen\":1,\"true_reward_rejected\":0}\n",
              1, false);
  expect_line("{\"pair_id\":0,\"prompt_class\":0,\"chosen\":[0,1],\"rejected\":[1,0],"
              "\"true_reward_chosen\":1,\"true_reward_rejected\":0,\"label_flipped\":false,\"x\":1}\n",
              1, false);
  expect_line("{\"pair_id\":0,\"prompt_class\":2,\"chosen\":[0,1],\"rejected\":[1,0],"
              "\"true_reward_chosen\":1,\"true_reward_rejected\":0,\"label_flipped\":false}\n",
              1, true);
  expect_line("{\"pair_id\":0,\"prompt_class\":0,\"chosen\":[0,1],\"rejected\":[0,1],"
              "\"true_reward_chosen\":1,\"true_reward_rejected\":0,\"label_flipped\":false}\n",
              1, true);
  expect_line("{\"pair_id\":0,\"prompt_class\":0,\"chosen\":[0,1],\"rejected\":[0],"
              "\"true_reward_chosen\":1,\"true_reward_rejected\":0,\"label_flipped\":false}\n",
              1, true);
  EXPECT_THROW(load_dataset("/nonexistent/dir/x.jsonl"), IoError);
}
