#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "focalpo/errors.hpp"
#include "focalpo/policy.hpp"
#include "test_helpers.hpp"

using namespace focalpo;
using focalpo::testing::random_sequence;

namespace {

// Independent oracle: probability of a sequence as a product of explicit
// softmax ratios, no log-sum-exp.
double chain_probability(const PolicyTable& policy, const TokenSequence& seq) {
  double prob = 1.0;
  int prev = policy.bos();
  for (Token t : seq.tokens) {
    const auto row = policy.logits(seq.prompt_class, prev);
    double z = 0.0;
    for (double x : row) z += std::exp(x);
    prob *= std::exp(row[t]) / z;
    prev = t;
  }
  return prob;
}

}  // namespace

TEST(PolicyTable, ShapeAndIndexing) {
  PolicyTable t(4, 8);
  EXPECT_EQ(t.num_contexts(), 4u * 9u);
  EXPECT_EQ(t.data().size(), 4u * 9u * 8u);
  EXPECT_EQ(t.bos(), 8);
  EXPECT_EQ(t.context_index(1, 8), 17u);
  EXPECT_THROW(t.context_index(4, 0), IndexError);
  EXPECT_THROW(t.context_index(0, 9), IndexError);
  EXPECT_THROW(PolicyTable(0, 3), ConfigError);
}

TEST(PolicyTable, SoftmaxNormalizes) {
  const auto t = PolicyTable::random_normal(3, 6, 5);
  for (std::size_t ctx = 0; ctx < t.num_contexts(); ++ctx) {
    double total = 0.0;
    for (double lp : t.log_softmax(ctx)) total += std::exp(lp);
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(SequenceLogProb, UniformPolicy) {
  PolicyTable t(1, 4);
  EXPECT_NEAR(sequence_log_prob(t, {0, {0, 3, 2}}), -4.1588830833596719, 1e-14);
}

TEST(SequenceLogProb, HandBuiltChain) {
  PolicyTable t(1, 2);
  t.logits(0, t.bos())[0] = 1.0;
  // ln(e/(e+1)) + ln(1/2); tests/oracles/oracle_values.py
  EXPECT_NEAR(sequence_log_prob(t, {0, {0, 1}}), -1.0064088680781681, 1e-14);
  double total = 0.0;
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b) total += std::exp(sequence_log_prob(t, {0, {a, b}}));
  EXPECT_NEAR(total, 1.0, 1e-14);
}

TEST(SequenceLogProb, Errors) {
  PolicyTable t(2, 3);
  EXPECT_THROW(sequence_log_prob(t, {0, {3}}), IndexError);
  EXPECT_THROW(sequence_log_prob(t, {2, {0}}), IndexError);
  EXPECT_THROW(sequence_log_prob(t, {0, {}}), IndexError);
  EXPECT_THROW(sequence_log_prob(t, {0, {-1}}), IndexError);
}

TEST(SequenceLogProb, NonPositiveAndMatchesChainProduct) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 50; ++i) {
    const auto t = PolicyTable::random_normal(3, 5, 100 + i);
    const auto seq = random_sequence(rng, 3, 5, 1 + i % 6);
    const double lp = sequence_log_prob(t, seq);
    EXPECT_LE(lp, 0.0);
    EXPECT_NEAR(std::exp(lp), chain_probability(t, seq), 1e-13);
  }
}

TEST(SequenceLogProb, BruteForceEnumerationSumsToOne) {
  for (int vocab = 1; vocab <= 4; ++vocab) {
    for (int length = 1; length <= 3; ++length) {
      const auto t = PolicyTable::random_normal(2, vocab, 31 * vocab + length);
      for (int c = 0; c < 2; ++c) {
        double total = 0.0;
        int count = 1;
        for (int i = 0; i < length; ++i) count *= vocab;
        for (int code = 0; code < count; ++code) {
          TokenSequence seq{c, {}};
          for (int i = 0, x = code; i < length; ++i, x /= vocab) seq.tokens.push_back(x % vocab);
          total += std::exp(sequence_log_prob(t, seq));
        }
        EXPECT_NEAR(total, 1.0, 1e-10) << vocab << " " << length;
      }
    }
  }
}

TEST(SequenceLogProbGrad, UniformPolicyEntries) {
  PolicyTable t(1, 4);
  const auto g = sequence_log_prob_grad(t, {0, {2, 2, 1}});
  const auto bos = t.context_index(0, t.bos());
  const auto after2 = t.context_index(0, 2);
  EXPECT_DOUBLE_EQ(g.at(bos, 2), 0.75);
  EXPECT_DOUBLE_EQ(g.at(bos, 0), -0.25);
  // Context "previous = 2" is visited twice: realized tokens 2 then 1.
  EXPECT_DOUBLE_EQ(g.at(after2, 2), 0.75 - 0.25);
  EXPECT_DOUBLE_EQ(g.at(after2, 1), 0.75 - 0.25);
  EXPECT_DOUBLE_EQ(g.at(after2, 0), -0.5);
  EXPECT_EQ(g.entries().size(), 2u);
}

TEST(SequenceLogProbGrad, RowsSumToZeroAndAreBounded) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 20; ++i) {
    const auto t = PolicyTable::random_normal(2, 5, 900 + i);
    const auto seq = random_sequence(rng, 2, 5, 4);
    const auto g = sequence_log_prob_grad(t, seq);
    for (const auto& [ctx, row] : g.entries()) {
      double sum = 0.0;
      for (double x : row) {
        sum += x;
        EXPECT_LE(std::abs(x), static_cast<double>(seq.tokens.size()));
      }
      EXPECT_NEAR(sum, 0.0, 1e-12);
    }
  }
}

TEST(SequenceLogProbGrad, MatchesFiniteDifferences) {
  std::mt19937_64 rng(2024);
  const double h = 1e-5;
  for (int instance = 0; instance < 20; ++instance) {
    auto t = PolicyTable::random_normal(2, 5, 7000 + instance);
    const auto seq = random_sequence(rng, 2, 5, 4);
    const auto g = sequence_log_prob_grad(t, seq);
    auto params = t.data();
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double saved = params[i];
      params[i] = saved + h;
      const double up = sequence_log_prob(t, seq);
      params[i] = saved - h;
      const double down = sequence_log_prob(t, seq);
      params[i] = saved;
      const double fd = (up - down) / (2 * h);
      const double analytic = g.at(i / 5, static_cast<int>(i % 5));
      const double scale = std::max({std::abs(fd), std::abs(analytic), 1e-3});
      EXPECT_LE(std::abs(fd - analytic), 1e-6 * scale) << "instance " << instance << " coord " << i;
    }
  }
}

TEST(ImplicitReward, Properties) {
  const auto ref = PolicyTable::random_normal(2, 4, 1);
  auto policy = ref;
  const TokenSequence seq{1, {0, 3, 2}};
  EXPECT_EQ(implicit_reward(policy, ref, seq, 0.01), 0.0);
  policy.logits(1, policy.bos())[0] += 0.7;
  const double r1 = implicit_reward(policy, ref, seq, 0.01);
  EXPECT_NE(r1, 0.0);
  EXPECT_NEAR(implicit_reward(policy, ref, seq, 0.02), 2.0 * r1, 1e-15);
  EXPECT_THROW(implicit_reward(PolicyTable(2, 5), ref, seq, 0.01), ConfigError);
}

TEST(ImplicitReward, DirectProduct) {
  // Uniform policy over two tokens; the reference puts log-probability
  // ln(1/2) - 3.2 on token 0, so the log-ratio of [0] is exactly +3.2.
  PolicyTable policy(1, 2);
  PolicyTable ref(1, 2);
  const double target = std::log(0.5) - 3.2;
  ref.logits(0, ref.bos())[0] = target - std::log1p(-std::exp(target));
  EXPECT_NEAR(sequence_log_prob(policy, {0, {0}}) - sequence_log_prob(ref, {0, {0}}), 3.2, 1e-13);
  EXPECT_NEAR(implicit_reward(policy, ref, {0, {0}}, 0.01), 0.032, 1e-15);
}

TEST(PairMargin, ZeroAtInitAndAntisymmetric) {
  const auto ref = PolicyTable::random_normal(2, 4, 9);
  auto policy = ref;
  PreferencePair pair{0, 1, {0, 1, 2}, {3, 3, 1}, 0, 0, false};
  EXPECT_EQ(pair_margin(policy, ref, pair, 0.01), 0.0);

  std::mt19937_64 rng(4);
  for (double& x : policy.data()) x += std::normal_distribution<double>(0, 0.5)(rng);
  const double m = pair_margin(policy, ref, pair, 0.01);
  PreferencePair swapped = pair;
  std::swap(swapped.chosen, swapped.rejected);
  EXPECT_EQ(pair_margin(policy, ref, swapped, 0.01), -m);

  const double dlog_policy = sequence_log_prob(policy, pair.chosen_sequence()) -
                             sequence_log_prob(policy, pair.rejected_sequence());
  const double dlog_ref = sequence_log_prob(ref, pair.chosen_sequence()) -
                          sequence_log_prob(ref, pair.rejected_sequence());
  EXPECT_NEAR(m, 0.01 * (dlog_policy - dlog_ref), 1e-15);
}

TEST(SampleSequence, DeterministicPerSeed) {
  const auto t = PolicyTable::random_normal(2, 6, 3);
  EXPECT_EQ(sample_sequence(t, 1, 10, 42), sample_sequence(t, 1, 10, 42));
  EXPECT_EQ(sample_sequence(t, 1, 10, 42).tokens.size(), 10u);
  EXPECT_THROW(sample_sequence(t, 2, 3, 1), ConfigError);
  EXPECT_THROW(sample_sequence(t, 0, 0, 1), ConfigError);
}

TEST(SampleSequence, UniformFrequencies) {
  PolicyTable t(1, 4);
  int counts[4] = {0, 0, 0, 0};
  const int n = 100000;
  for (int i = 0; i < n; ++i) ++counts[sample_sequence(t, 0, 1, 1000 + i).tokens[0]];
  for (int c : counts) EXPECT_NEAR(static_cast<double>(c) / n, 0.25, 0.01);
}

TEST(SampleSequence, SaturatedSoftmax) {
  PolicyTable t(1, 5);
  for (int prev = 0; prev <= 5; ++prev) t.logits(0, prev)[3] = 50.0;
  int hits = 0;
  for (int i = 0; i < 1000; ++i) hits += sample_sequence(t, 0, 1, i).tokens[0] == 3;
  EXPECT_GT(hits / 1000.0, 0.999);
}

TEST(PolicyText, RoundTripIsExact) {
  const auto t = PolicyTable::random_normal(3, 7, 77);
  std::stringstream ss;
  write_policy_text(ss, t);
  const auto back = read_policy_text(ss);
  EXPECT_EQ(back, t);
  EXPECT_EQ(back.checksum(), t.checksum());
}

TEST(PolicyText, Layout) {
  PolicyTable t(1, 2);
  t.logits(0, 0)[1] = 0.1;
  std::stringstream ss;
  write_policy_text(ss, t);
  EXPECT_EQ(ss.str(), "1 2\n0 0.10000000000000001\n0 0\n0 0\n");
}

TEST(PolicyText, MalformedInput) {
  auto parse = [](const std::string& text) {
    std::istringstream in(text);
    return read_policy_text(in);
  };
  EXPECT_THROW(parse(""), ParseError);
  EXPECT_THROW(parse("1\n"), ParseError);
  EXPECT_THROW(parse("1 2\n0 0\n0 0\n"), ParseError);  // missing row
  EXPECT_THROW(parse("1 2\n0 0 0\n0 0\n0 0\n"), ParseError);
  EXPECT_THROW(parse("1 2\n0 x\n0 0\n0 0\n"), ParseError);
  EXPECT_THROW(parse("1 2\n0 0\n0 0\n0 0\n5 5\n"), ParseError);
  try {
    parse("1 2\n0 0\n0 nan\n0 0\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
}

TEST(PolicyTable, ChecksumTracksEveryLogit) {
  const auto t = PolicyTable::random_normal(2, 3, 1);
  auto u = t;
  u.data()[5] = std::nextafter(u.data()[5], 10.0);
  EXPECT_NE(t.checksum(), u.checksum());
}
