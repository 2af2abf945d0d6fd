#include "focalpo/policy.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>
#include <string>

#include "focalpo/errors.hpp"
#include "rng.hpp"

namespace focalpo {

namespace {

void check_sequence(const PolicyTable& policy, const TokenSequence& seq) {
  if (seq.prompt_class < 0 || seq.prompt_class >= policy.num_prompt_classes())
    throw IndexError("prompt class " + std::to_string(seq.prompt_class) + " outside [0, " +
                     std::to_string(policy.num_prompt_classes()) + ")");
  if (seq.tokens.empty()) throw IndexError("empty token sequence");
  for (Token t : seq.tokens) {
    if (t < 0 || t >= policy.vocab_size())
      throw IndexError("token " + std::to_string(t) + " outside [0, " +
                       std::to_string(policy.vocab_size()) + ")");
  }
}

void check_shapes(const PolicyTable& policy, const PolicyTable& reference) {
  if (!policy.same_shape(reference))
    throw ConfigError("policy shape " + std::to_string(policy.num_prompt_classes()) + "x" +
                      std::to_string(policy.vocab_size()) + " does not match reference shape " +
                      std::to_string(reference.num_prompt_classes()) + "x" +
                      std::to_string(reference.vocab_size()));
}

double log_sum_exp(std::span<const double> xs) {
  const double m = *std::max_element(xs.begin(), xs.end());
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

}  // namespace

PolicyTable::PolicyTable(int num_prompt_classes, int vocab_size)
    : classes_(num_prompt_classes), vocab_(vocab_size) {
  if (num_prompt_classes <= 0 || vocab_size <= 0)
    throw ConfigError("policy table needs positive class count and vocabulary size");
  logits_.assign(num_contexts() * static_cast<std::size_t>(vocab_), 0.0);
}

PolicyTable PolicyTable::random_normal(int num_prompt_classes, int vocab_size,
                                       std::uint64_t seed) {
  PolicyTable table(num_prompt_classes, vocab_size);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& x : table.logits_) x = normal(rng);
  return table;
}

std::size_t PolicyTable::context_index(int prompt_class, int previous) const {
  if (prompt_class < 0 || prompt_class >= classes_)
    throw IndexError("prompt class " + std::to_string(prompt_class) + " out of range");
  if (previous < 0 || previous > vocab_)
    throw IndexError("previous token " + std::to_string(previous) + " out of range");
  return static_cast<std::size_t>(prompt_class) * static_cast<std::size_t>(vocab_ + 1) +
         static_cast<std::size_t>(previous);
}

std::span<const double> PolicyTable::context_logits(std::size_t context) const {
  if (context >= num_contexts()) throw IndexError("context index out of range");
  return std::span<const double>(logits_).subspan(context * vocab_, vocab_);
}

std::span<double> PolicyTable::context_logits(std::size_t context) {
  if (context >= num_contexts()) throw IndexError("context index out of range");
  return std::span<double>(logits_).subspan(context * vocab_, vocab_);
}

std::vector<double> PolicyTable::log_softmax(std::size_t context) const {
  const auto row = context_logits(context);
  const double lse = log_sum_exp(row);
  std::vector<double> out(row.size());
  std::transform(row.begin(), row.end(), out.begin(), [lse](double x) { return x - lse; });
  return out;
}

std::uint64_t PolicyTable::checksum() const noexcept {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  };
  mix(&classes_, sizeof classes_);
  mix(&vocab_, sizeof vocab_);
  mix(logits_.data(), logits_.size() * sizeof(double));
  return h;
}

std::vector<double>& GradTable::row(std::size_t context) {
  auto [it, inserted] = entries_.try_emplace(context);
  if (inserted) it->second.assign(static_cast<std::size_t>(vocab_), 0.0);
  return it->second;
}

double GradTable::at(std::size_t context, int token) const {
  const auto it = entries_.find(context);
  return it == entries_.end() ? 0.0 : it->second.at(static_cast<std::size_t>(token));
}

void GradTable::add_scaled(const GradTable& other, double scale) {
  if (other.vocab_ != vocab_) throw ConfigError("gradient vocabulary mismatch");
  for (const auto& [context, values] : other.entries_) {
    auto& dst = row(context);
    for (std::size_t k = 0; k < values.size(); ++k) dst[k] += scale * values[k];
  }
}

double sequence_log_prob(const PolicyTable& policy, const TokenSequence& seq) {
  check_sequence(policy, seq);
  double total = 0.0;
  int prev = policy.bos();
  for (Token t : seq.tokens) {
    const auto row = policy.logits(seq.prompt_class, prev);
    total += row[static_cast<std::size_t>(t)] - log_sum_exp(row);
    prev = t;
  }
  return total;
}

GradTable sequence_log_prob_grad(const PolicyTable& policy, const TokenSequence& seq) {
  check_sequence(policy, seq);
  GradTable grad(policy.vocab_size());
  int prev = policy.bos();
  for (Token t : seq.tokens) {
    const std::size_t ctx = policy.context_index(seq.prompt_class, prev);
    const auto logp = policy.log_softmax(ctx);
    auto& row = grad.row(ctx);
    for (std::size_t k = 0; k < logp.size(); ++k) row[k] -= std::exp(logp[k]);
    row[static_cast<std::size_t>(t)] += 1.0;
    prev = t;
  }
  return grad;
}

double implicit_reward(const PolicyTable& policy, const PolicyTable& reference,
                       const TokenSequence& seq, double beta) {
  check_shapes(policy, reference);
  if (!(beta > 0.0)) throw ConfigError("beta must be > 0");
  return beta * (sequence_log_prob(policy, seq) - sequence_log_prob(reference, seq));
}

Margin pair_margin(const PolicyTable& policy, const PolicyTable& reference,
                   const PreferencePair& pair, double beta) {
  return implicit_reward(policy, reference, pair.chosen_sequence(), beta) -
         implicit_reward(policy, reference, pair.rejected_sequence(), beta);
}

TokenSequence sample_sequence(const PolicyTable& policy, int prompt_class, int length,
                              std::uint64_t seed) {
  if (prompt_class < 0 || prompt_class >= policy.num_prompt_classes())
    throw ConfigError("prompt class " + std::to_string(prompt_class) + " out of range");
  if (length < 1) throw ConfigError("sequence length must be >= 1");
  std::mt19937_64 rng(seed);
  TokenSequence seq{prompt_class, {}};
  seq.tokens.reserve(static_cast<std::size_t>(length));
  int prev = policy.bos();
  for (int step = 0; step < length; ++step) {
    const auto logp = policy.log_softmax(policy.context_index(prompt_class, prev));
    const double u = detail::uniform01(rng);
    double cumulative = 0.0;
    Token pick = policy.vocab_size() - 1;
    for (std::size_t k = 0; k < logp.size(); ++k) {
      cumulative += std::exp(logp[k]);
      if (u < cumulative) {
        pick = static_cast<Token>(k);
        break;
      }
    }
    seq.tokens.push_back(pick);
    prev = pick;
  }
  return seq;
}

void write_policy_text(std::ostream& out, const PolicyTable& policy) {
  out << policy.num_prompt_classes() << ' ' << policy.vocab_size() << '\n';
  char buf[32];
  for (std::size_t ctx = 0; ctx < policy.num_contexts(); ++ctx) {
    const auto row = policy.context_logits(ctx);
    for (std::size_t k = 0; k < row.size(); ++k) {
      std::snprintf(buf, sizeof buf, "%.17g", row[k]);
      if (k) out << ' ';
      out << buf;
    }
    out << '\n';
  }
}

PolicyTable read_policy_text(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError(1, "missing 'C V' header");
  int classes = 0;
  int vocab = 0;
  {
    std::istringstream header(line);
    std::string extra;
    if (!(header >> classes >> vocab) || (header >> extra) || classes <= 0 || vocab <= 0)
      throw ParseError(1, "header must be two positive integers 'C V'");
  }
  PolicyTable table(classes, vocab);
  for (std::size_t ctx = 0; ctx < table.num_contexts(); ++ctx) {
    const std::size_t line_no = ctx + 2;
    if (!std::getline(in, line)) throw ParseError(line_no, "missing context row");
    auto row = table.context_logits(ctx);
    const char* p = line.data();
    const char* end = line.data() + line.size();
    for (std::size_t k = 0; k < row.size(); ++k) {
      while (p < end && *p == ' ') ++p;
      const auto [next, ec] = std::from_chars(p, end, row[k]);
      if (ec != std::errc() || !std::isfinite(row[k]))
        throw ParseError(line_no, "expected " + std::to_string(vocab) + " finite logits");
      p = next;
    }
    while (p < end && *p == ' ') ++p;
    if (p != end) throw ParseError(line_no, "trailing content after " + std::to_string(vocab) + " logits");
  }
  while (std::getline(in, line)) {
    if (!line.empty()) throw ParseError(table.num_contexts() + 2, "unexpected extra row");
  }
  return table;
}

void save_policy(const std::filesystem::path& path, const PolicyTable& policy) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_policy_text(out, policy);
  if (!out) throw IoError("failed writing " + path.string());
}

PolicyTable load_policy(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_policy_text(in);
}

}  // namespace focalpo
