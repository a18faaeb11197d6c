#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "cidg/corpus.hpp"
#include "cidg/model.hpp"
#include "cidg/tokenizer.hpp"

namespace cidg {

class DecodeError : public Error {
 public:
  using Error::Error;
};

struct DecodeConfig {
  std::size_t beam_size = 3;
  std::size_t no_repeat_ngram = 3;  // 0 disables blocking
  std::size_t max_len = 128;  // counts the EOS token
  double length_alpha = 1.0;

  void validate() const;
  bool operator==(const DecodeConfig&) const = default;
};

/// Next-token distribution for one growing hypothesis.
class ScoringState {
 public:
  virtual ~ScoringState() = default;
  /// Log-probabilities of the next token given the current prefix.
  virtual const std::vector<double>& log_probs() const = 0;
  virtual void push(TokenId token) = 0;
  virtual std::unique_ptr<ScoringState> clone() const = 0;
};

/// Anything that can score continuations of a source sequence.
class SequenceScorer {
 public:
  virtual ~SequenceScorer() = default;
  virtual std::size_t vocab_size() const = 0;
  /// State positioned right after BOS.
  virtual std::unique_ptr<ScoringState> start(std::span<const TokenId> source) const = 0;
};

/// Scores with the encoder-decoder through its incremental decoder.
class TransformerScorer : public SequenceScorer {
 public:
  explicit TransformerScorer(const Params<float>& params) : params_(&params) {}
  std::size_t vocab_size() const override { return params_->config.vocab_size; }
  std::unique_ptr<ScoringState> start(std::span<const TokenId> source) const override;

 private:
  const Params<float>* params_;
};

/// Adapts a stateless function (source, prefix) -> log-probs. Used for
/// constructed models in tests and tools.
class FunctionScorer : public SequenceScorer {
 public:
  using Fn = std::function<std::vector<double>(std::span<const TokenId> source, std::span<const TokenId> prefix)>;

  FunctionScorer(std::size_t vocab_size, Fn fn) : vocab_size_(vocab_size), fn_(std::move(fn)) {}
  std::size_t vocab_size() const override { return vocab_size_; }
  std::unique_ptr<ScoringState> start(std::span<const TokenId> source) const override;

 private:
  std::size_t vocab_size_;
  Fn fn_;
};

/// Tokens v such that prefix[-(n-1):] ++ [v] repeats an n-gram already in
/// `prefix`. Empty for n = 0 or a prefix shorter than n - 1.
std::set<TokenId> banned_tokens(std::span<const TokenId> prefix, std::size_t n);

struct Hypothesis {
  std::vector<TokenId> tokens;  // without BOS; ends with EOS when finished by EOS
  double log_prob = 0.0;
  bool finished = false;
};

/// log_prob / length^alpha, where length counts the EOS token.
double normalized_score(const Hypothesis& h, double alpha);

/// Final ranking: higher normalized score, then shorter, then
/// lexicographically smaller token ids.
bool ranks_before(const Hypothesis& a, const Hypothesis& b, double alpha);

/// Beam search from BOS. Banned tokens are skipped (EOS is never banned);
/// the top beam_size candidates by cumulative log-probability survive each
/// step and those ending in EOS or reaching max_len move to the finished
/// pool. Stops once no live hypothesis can still outrank the best finished
/// one. Returns the best finished hypothesis without its EOS.
std::vector<TokenId> beam_search(const SequenceScorer& scorer, std::span<const TokenId> source,
                                 const DecodeConfig& cfg);

/// Argmax per step (ties to the smaller id) with the same blocking and
/// stopping rules.
std::vector<TokenId> greedy_decode(const SequenceScorer& scorer, std::span<const TokenId> source,
                                   const DecodeConfig& cfg);

struct Generation {
  std::optional<std::string> instruction;
  std::string response;
};

// Inference procedures of the multi-task model. All decode with beam_search.

/// Instruction from case 3 and response from case 4, independently.
Generation generate_naive(const SequenceScorer& scorer, const DialogueExample& example, const Vocabulary& vocab,
                          const DecodeConfig& cfg, std::size_t max_src_len);

/// Instruction from case 3, then the response from case 2 conditioned on it.
/// An empty instruction falls back to the case-4 response.
Generation generate_iterative(const SequenceScorer& scorer, const DialogueExample& example, const Vocabulary& vocab,
                              const DecodeConfig& cfg, std::size_t max_src_len);

/// Instruction from case 1 (using the gold response), then case 2.
Generation generate_oracle(const SequenceScorer& scorer, const DialogueExample& example, const Vocabulary& vocab,
                           const DecodeConfig& cfg, std::size_t max_src_len);

/// Case-2 response for a given instruction.
Generation generate_with_instruction(const SequenceScorer& scorer, const DialogueExample& example,
                                     const std::string& instruction, const Vocabulary& vocab,
                                     const DecodeConfig& cfg, std::size_t max_src_len);

/// Case-4 response, no instruction.
Generation generate_response_only(const SequenceScorer& scorer, const DialogueExample& example,
                                  const Vocabulary& vocab, const DecodeConfig& cfg, std::size_t max_src_len);

}  // namespace cidg
