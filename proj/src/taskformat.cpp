#include "cidg/taskformat.hpp"

namespace cidg {

namespace {

void append(std::vector<TokenId>& dst, const std::vector<TokenId>& src) { dst.insert(dst.end(), src.begin(), src.end()); }

}  // namespace

PairKind pair_kind(TaskCase c) {
  switch (c) {
    case TaskCase::InstrFromContextAndResponse: return PairKind::Case1;
    case TaskCase::RespFromInstructionAndContext: return PairKind::Case2;
    case TaskCase::InstrFromContext: return PairKind::Case3;
    case TaskCase::RespFromContext: return PairKind::Case4;
  }
  throw Error("invalid task case");
}

const char* to_string(PairKind kind) {
  switch (kind) {
    case PairKind::Case1: return "instr_from_context_and_response";
    case PairKind::Case2: return "resp_from_instruction_and_context";
    case PairKind::Case3: return "instr_from_context";
    case PairKind::Case4: return "resp_from_context";
    case PairKind::InstGen: return "instgen";
    case PairKind::InstGenQuery: return "instgen_query";
  }
  return "?";
}

const char* to_string(TaskCase c) { return to_string(pair_kind(c)); }

std::string serialize_context(const DialogueExample& example) {
  std::string out;
  if (!example.persona.empty()) {
    out += "[PER]";
    for (std::size_t i = 0; i < example.persona.size(); ++i) {
      if (i > 0) out += " [SEP]";
      out += ' ';
      out += example.persona[i];
    }
    out += ' ';
  }
  out += "[CTX]";
  for (const auto& turn : example.turns) {
    out += turn.speaker == Speaker::A ? " [SPKA]" : " [SPKB]";
    if (!turn.text.empty()) {
      out += ' ';
      out += turn.text;
    }
  }
  return out;
}

std::vector<TokenId> ContextTokens::flatten() const {
  std::vector<TokenId> out = persona;
  out.push_back(tok::kCtx);
  for (const auto& t : turns) append(out, t);
  return out;
}

ContextTokens context_tokens(const Vocabulary& vocab, const std::vector<std::string>& persona,
                             const std::vector<Turn>& turns) {
  ContextTokens ctx;
  if (!persona.empty()) {
    ctx.persona.push_back(tok::kPer);
    for (std::size_t i = 0; i < persona.size(); ++i) {
      if (i > 0) ctx.persona.push_back(tok::kSep);
      append(ctx.persona, encode(vocab, persona[i]));
    }
  }
  for (const auto& turn : turns) {
    std::vector<TokenId> t{turn.speaker == Speaker::A ? tok::kSpkA : tok::kSpkB};
    append(t, encode(vocab, turn.text));
    ctx.turns.push_back(std::move(t));
  }
  return ctx;
}

SeqPair format_case(const DialogueExample& example, std::string_view instruction, TaskCase task,
                    const Vocabulary& vocab, std::size_t max_src_len) {
  ContextTokens ctx = context_tokens(vocab, example.persona, example.turns);
  const std::vector<TokenId> response = encode(vocab, example.response);
  const bool wants_instruction = task != TaskCase::RespFromContext;
  const std::vector<TokenId> instr = wants_instruction ? encode(vocab, instruction) : std::vector<TokenId>{};

  std::vector<TokenId> prefix;
  std::vector<TokenId> suffix;
  SeqPair pair;
  pair.kind = pair_kind(task);
  switch (task) {
    case TaskCase::InstrFromContextAndResponse:
      prefix = {tok::kGenInst};
      suffix.push_back(tok::kRsp);
      append(suffix, response);
      pair.target = instr;
      break;
    case TaskCase::RespFromInstructionAndContext:
      prefix = {tok::kGenResp, tok::kIns};
      append(prefix, instr);
      pair.target = response;
      break;
    case TaskCase::InstrFromContext:
      prefix = {tok::kGenInst};
      pair.target = instr;
      break;
    case TaskCase::RespFromContext:
      prefix = {tok::kGenResp};
      pair.target = response;
      break;
  }
  pair.target.push_back(tok::kEos);

  const std::size_t fixed = prefix.size() + ctx.persona.size() + 1 + suffix.size();
  std::size_t turn_tokens = 0;
  for (const auto& t : ctx.turns) turn_tokens += t.size();

  if (fixed + turn_tokens > max_src_len) {
    // Minimal context: speaker marker plus one word of the newest turn.
    const std::size_t minimal = ctx.turns.empty() ? 0 : std::min<std::size_t>(2, ctx.turns.back().size());
    if (fixed + minimal > max_src_len)
      throw FormatError(std::string(to_string(task)) + " source needs at least " + std::to_string(fixed + minimal) +
                        " tokens, budget is " + std::to_string(max_src_len));
    std::size_t first = 0;
    while (fixed + turn_tokens > max_src_len && first + 1 < ctx.turns.size()) {
      turn_tokens -= ctx.turns[first].size();
      ++first;
    }
    ctx.turns.erase(ctx.turns.begin(), ctx.turns.begin() + static_cast<std::ptrdiff_t>(first));
    if (fixed + turn_tokens > max_src_len) {
      auto& newest = ctx.turns.back();
      const std::size_t excess = fixed + turn_tokens - max_src_len;
      newest.erase(newest.begin() + 1, newest.begin() + 1 + static_cast<std::ptrdiff_t>(excess));
    }
  }

  pair.source = std::move(prefix);
  append(pair.source, ctx.flatten());
  append(pair.source, suffix);
  return pair;
}

SeqPair format_instgen(std::string_view x, std::string_view y, const std::optional<std::string>& instruction,
                       const Vocabulary& vocab, std::size_t max_src_len) {
  std::vector<TokenId> xs = encode_markup(vocab, x);
  const std::vector<TokenId> ys = encode(vocab, y);
  if (ys.empty()) throw FormatError("instruction-generator output is empty");
  if (max_src_len < 3 || ys.size() > max_src_len - 3)
    throw FormatError("instruction-generator output has " + std::to_string(ys.size()) +
                      " tokens, budget allows " + std::to_string(max_src_len < 3 ? 0 : max_src_len - 3));
  const std::size_t room = max_src_len - 3 - ys.size();
  if (xs.size() > room) xs.erase(xs.begin(), xs.end() - static_cast<std::ptrdiff_t>(room));

  SeqPair pair;
  pair.source = {tok::kMask0, tok::kCtx};
  append(pair.source, xs);
  pair.source.push_back(tok::kRsp);
  append(pair.source, ys);
  if (instruction) {
    pair.kind = PairKind::InstGen;
    pair.target = {tok::kMask0};
    append(pair.target, encode(vocab, *instruction));
    pair.target.push_back(tok::kEos);
  } else {
    pair.kind = PairKind::InstGenQuery;
  }
  return pair;
}

TaskCase sample_case(Rng& rng, TrainingMode mode) {
  if (mode == TrainingMode::ResponseOnly) return TaskCase::RespFromContext;
  return static_cast<TaskCase>(1 + rng.below(4));
}

}  // namespace cidg
