#include "cidg/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cidg/taskformat.hpp"

namespace cidg {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

class TransformerState : public ScoringState {
 public:
  TransformerState(const Params<float>& params, std::span<const TokenId> source) : decoder_(params, source) {
    push(tok::kBos);
  }

  const std::vector<double>& log_probs() const override { return log_probs_; }

  void push(TokenId token) override {
    const auto logits = decoder_.step(token);
    log_probs_ = log_softmax(logits.data(), logits.size());
  }

  std::unique_ptr<ScoringState> clone() const override { return std::make_unique<TransformerState>(*this); }

 private:
  IncrementalDecoder<float> decoder_;
  std::vector<double> log_probs_;
};

class FunctionState : public ScoringState {
 public:
  FunctionState(const FunctionScorer::Fn* fn, std::size_t vocab, std::vector<TokenId> source)
      : fn_(fn), vocab_(vocab), source_(std::move(source)) {
    refresh();
  }

  const std::vector<double>& log_probs() const override { return log_probs_; }

  void push(TokenId token) override {
    prefix_.push_back(token);
    refresh();
  }

  std::unique_ptr<ScoringState> clone() const override { return std::make_unique<FunctionState>(*this); }

 private:
  void refresh() {
    log_probs_ = (*fn_)(source_, prefix_);
    if (log_probs_.size() != vocab_) throw DecodeError("scorer returned a distribution of the wrong size");
  }

  const FunctionScorer::Fn* fn_;
  std::size_t vocab_;
  std::vector<TokenId> source_;
  std::vector<TokenId> prefix_;
  std::vector<double> log_probs_;
};

bool usable(double lp) { return lp > kNegInf; }  // false for -inf and NaN

struct Beam {
  Hypothesis hyp;
  std::unique_ptr<ScoringState> state;
};

struct Candidate {
  std::size_t parent;
  TokenId token;
  double log_prob;
};

std::vector<TokenId> strip_eos(std::vector<TokenId> tokens) {
  if (!tokens.empty() && tokens.back() == tok::kEos) tokens.pop_back();
  return tokens;
}

std::string decode_text(const Vocabulary& vocab, const std::vector<TokenId>& ids) { return decode(vocab, ids); }

}  // namespace

void DecodeConfig::validate() const {
  if (beam_size < 1) throw DecodeError("beam_size must be at least 1");
  if (max_len < 1) throw DecodeError("max_len must be at least 1");
  if (!(length_alpha >= 0.0)) throw DecodeError("length_alpha must be non-negative");
}

std::unique_ptr<ScoringState> TransformerScorer::start(std::span<const TokenId> source) const {
  return std::make_unique<TransformerState>(*params_, source);
}

std::unique_ptr<ScoringState> FunctionScorer::start(std::span<const TokenId> source) const {
  return std::make_unique<FunctionState>(&fn_, vocab_size_, std::vector<TokenId>(source.begin(), source.end()));
}

std::set<TokenId> banned_tokens(std::span<const TokenId> prefix, std::size_t n) {
  std::set<TokenId> banned;
  if (n == 0 || prefix.size() + 1 < n) return banned;
  const std::size_t ctx = n - 1;
  const auto tail = prefix.subspan(prefix.size() - ctx);
  for (std::size_t start = 0; start + n <= prefix.size(); ++start) {
    if (std::equal(tail.begin(), tail.end(), prefix.begin() + static_cast<std::ptrdiff_t>(start)))
      banned.insert(prefix[start + ctx]);
  }
  return banned;
}

double normalized_score(const Hypothesis& h, double alpha) {
  const double len = static_cast<double>(std::max<std::size_t>(h.tokens.size(), 1));
  return h.log_prob / std::pow(len, alpha);
}

bool ranks_before(const Hypothesis& a, const Hypothesis& b, double alpha) {
  const double sa = normalized_score(a, alpha), sb = normalized_score(b, alpha);
  if (sa != sb) return sa > sb;
  if (a.tokens.size() != b.tokens.size()) return a.tokens.size() < b.tokens.size();
  return a.tokens < b.tokens;
}

std::vector<TokenId> beam_search(const SequenceScorer& scorer, std::span<const TokenId> source,
                                 const DecodeConfig& cfg) {
  cfg.validate();
  const std::size_t vocab = scorer.vocab_size();
  std::vector<Beam> live;
  live.push_back({Hypothesis{}, scorer.start(source)});
  std::vector<Hypothesis> finished;
  const Hypothesis* best = nullptr;

  for (std::size_t step = 1; step <= cfg.max_len && !live.empty(); ++step) {
    std::vector<Candidate> cands;
    for (std::size_t b = 0; b < live.size(); ++b) {
      const auto& lps = live[b].state->log_probs();
      const auto banned = banned_tokens(live[b].hyp.tokens, cfg.no_repeat_ngram);
      for (std::size_t v = 0; v < vocab; ++v) {
        const auto id = static_cast<TokenId>(v);
        if (id != tok::kEos && banned.count(id)) continue;
        if (!usable(lps[v])) continue;
        cands.push_back({b, id, live[b].hyp.log_prob + lps[v]});
      }
    }
    if (cands.empty()) {
      if (step == 1) throw DecodeError("every first-step token is banned or has zero probability");
      break;
    }
    const std::size_t keep = std::min(cfg.beam_size, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                      [&live](const Candidate& a, const Candidate& b) {
                        if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
                        const auto& pa = live[a.parent].hyp.tokens;
                        const auto& pb = live[b.parent].hyp.tokens;
                        if (pa != pb) return pa < pb;
                        return a.token < b.token;
                      });

    std::vector<Beam> next;
    for (std::size_t i = 0; i < keep; ++i) {
      const Candidate& c = cands[i];
      Hypothesis h{live[c.parent].hyp.tokens, c.log_prob, false};
      h.tokens.push_back(c.token);
      if (c.token == tok::kEos || h.tokens.size() >= cfg.max_len) {
        h.finished = true;
        finished.push_back(std::move(h));
      } else {
        auto state = live[c.parent].state->clone();
        state->push(c.token);
        next.push_back({std::move(h), std::move(state)});
      }
    }
    live = std::move(next);

    best = nullptr;
    for (const auto& h : finished)
      if (!best || ranks_before(h, *best, cfg.length_alpha)) best = &h;
    if (best && !live.empty()) {
      // Continuations only lose log-probability, so a live hypothesis can at
      // most reach log_prob / max_len^alpha.
      const double best_score = normalized_score(*best, cfg.length_alpha);
      const double cap = std::pow(static_cast<double>(cfg.max_len), cfg.length_alpha);
      bool hopeful = false;
      for (const auto& b : live)
        if (b.hyp.log_prob / cap >= best_score) hopeful = true;
      if (!hopeful) break;
    }
  }
  if (finished.empty()) throw DecodeError("no hypothesis finished");
  best = &finished.front();
  for (const auto& h : finished)
    if (ranks_before(h, *best, cfg.length_alpha)) best = &h;
  return strip_eos(best->tokens);
}

std::vector<TokenId> greedy_decode(const SequenceScorer& scorer, std::span<const TokenId> source,
                                   const DecodeConfig& cfg) {
  cfg.validate();
  auto state = scorer.start(source);
  std::vector<TokenId> tokens;
  for (std::size_t step = 1; step <= cfg.max_len; ++step) {
    const auto& lps = state->log_probs();
    const auto banned = banned_tokens(tokens, cfg.no_repeat_ngram);
    TokenId best = -1;
    double best_lp = kNegInf;
    for (std::size_t v = 0; v < lps.size(); ++v) {
      const auto id = static_cast<TokenId>(v);
      if (id != tok::kEos && banned.count(id)) continue;
      if (!usable(lps[v])) continue;
      if (best < 0 || lps[v] > best_lp) {
        best = id;
        best_lp = lps[v];
      }
    }
    if (best < 0) {
      if (step == 1) throw DecodeError("every first-step token is banned or has zero probability");
      throw DecodeError("no hypothesis finished");
    }
    if (best == tok::kEos) break;
    tokens.push_back(best);
    if (tokens.size() >= cfg.max_len) break;
    state->push(best);
  }
  return tokens;
}

Generation generate_naive(const SequenceScorer& scorer, const DialogueExample& example, const Vocabulary& vocab,
                          const DecodeConfig& cfg, std::size_t max_src_len) {
  Generation g;
  const SeqPair inst = format_case(example, {}, TaskCase::InstrFromContext, vocab, max_src_len);
  g.instruction = decode_text(vocab, beam_search(scorer, inst.source, cfg));
  g.response = generate_response_only(scorer, example, vocab, cfg, max_src_len).response;
  return g;
}

Generation generate_iterative(const SequenceScorer& scorer, const DialogueExample& example, const Vocabulary& vocab,
                              const DecodeConfig& cfg, std::size_t max_src_len) {
  const SeqPair inst = format_case(example, {}, TaskCase::InstrFromContext, vocab, max_src_len);
  const std::string instruction = decode_text(vocab, beam_search(scorer, inst.source, cfg));
  Generation g = trim(instruction).empty()
                     ? generate_response_only(scorer, example, vocab, cfg, max_src_len)
                     : generate_with_instruction(scorer, example, instruction, vocab, cfg, max_src_len);
  g.instruction = instruction;
  return g;
}

Generation generate_oracle(const SequenceScorer& scorer, const DialogueExample& example, const Vocabulary& vocab,
                           const DecodeConfig& cfg, std::size_t max_src_len) {
  const SeqPair inst = format_case(example, {}, TaskCase::InstrFromContextAndResponse, vocab, max_src_len);
  const std::string instruction = decode_text(vocab, beam_search(scorer, inst.source, cfg));
  Generation g = trim(instruction).empty()
                     ? generate_response_only(scorer, example, vocab, cfg, max_src_len)
                     : generate_with_instruction(scorer, example, instruction, vocab, cfg, max_src_len);
  g.instruction = instruction;
  return g;
}

Generation generate_with_instruction(const SequenceScorer& scorer, const DialogueExample& example,
                                     const std::string& instruction, const Vocabulary& vocab,
                                     const DecodeConfig& cfg, std::size_t max_src_len) {
  const SeqPair pair = format_case(example, instruction, TaskCase::RespFromInstructionAndContext, vocab, max_src_len);
  return {instruction, decode_text(vocab, beam_search(scorer, pair.source, cfg))};
}

Generation generate_response_only(const SequenceScorer& scorer, const DialogueExample& example,
                                  const Vocabulary& vocab, const DecodeConfig& cfg, std::size_t max_src_len) {
  const SeqPair pair = format_case(example, {}, TaskCase::RespFromContext, vocab, max_src_len);
  return {std::nullopt, decode_text(vocab, beam_search(scorer, pair.source, cfg))};
}

}  // namespace cidg
