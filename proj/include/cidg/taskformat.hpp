#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cidg/common.hpp"
#include "cidg/corpus.hpp"
#include "cidg/tokenizer.hpp"

namespace cidg {

/// The four conditional formulations of the multi-task dialogue model.
enum class TaskCase {
  InstrFromContextAndResponse = 1,  // p(instruction | context, response)
  RespFromInstructionAndContext = 2,  // p(response | instruction, context)
  InstrFromContext = 3,  // p(instruction | context)
  RespFromContext = 4,  // p(response | context)
};

inline constexpr TaskCase kAllCases[] = {TaskCase::InstrFromContextAndResponse,
                                         TaskCase::RespFromInstructionAndContext,
                                         TaskCase::InstrFromContext, TaskCase::RespFromContext};

/// What a rendered pair trains or queries.
enum class PairKind { Case1, Case2, Case3, Case4, InstGen, InstGenQuery };

inline constexpr std::size_t kPairKindCount = 6;

PairKind pair_kind(TaskCase c);
const char* to_string(PairKind kind);
const char* to_string(TaskCase c);

/// A rendered (source, target) training or inference pair.
struct SeqPair {
  std::vector<TokenId> source;
  std::vector<TokenId> target;  // ends with EOS, except for InstGenQuery (empty)
  PairKind kind = PairKind::Case4;
};

/// Raised when the parts of a source that may not be truncated already exceed
/// the budget.
class FormatError : public Error {
 public:
  using Error::Error;
};

enum class TrainingMode {
  Full,  // uniform over the four cases
  ResponseOnly,  // always RespFromContext
};

/// Text layout of a context:
///   [PER] p1 [SEP] p2 ... [CTX] [SPKA] turn0 [SPKB] turn1 ...
/// The persona block is omitted when the persona is empty.
std::string serialize_context(const DialogueExample& example);

/// Token form of serialize_context, kept structured for truncation.
struct ContextTokens {
  std::vector<TokenId> persona;  // [PER] ... block, possibly empty
  std::vector<std::vector<TokenId>> turns;  // each starts with its speaker marker

  std::vector<TokenId> flatten() const;  // persona ++ [CTX] ++ turns
};

ContextTokens context_tokens(const Vocabulary& vocab, const std::vector<std::string>& persona,
                             const std::vector<Turn>& turns);

/// Renders one of the four cases. `instruction` is only read by cases 1-3.
/// Oldest whole turns are dropped first when the source is over budget, then
/// leading words of the newest turn; everything else is kept. Throws
/// FormatError when that is not enough.
SeqPair format_case(const DialogueExample& example, std::string_view instruction, TaskCase task,
                    const Vocabulary& vocab, std::size_t max_src_len);

inline SeqPair format_case(const LabeledExample& ex, TaskCase task, const Vocabulary& vocab,
                           std::size_t max_src_len) {
  return format_case(ex.example, ex.instruction, task, vocab, max_src_len);
}

/// Fill-in-the-blank pair for the instruction generator:
///   source <mask_0> [CTX] x [RSP] y   (x truncated from the left)
///   target <mask_0> instruction <eos>, or empty for an inference query.
/// `x` may carry context markup.
SeqPair format_instgen(std::string_view x, std::string_view y, const std::optional<std::string>& instruction,
                       const Vocabulary& vocab, std::size_t max_src_len);

/// One draw per call: uniform over the four cases in Full mode (rng() % 4),
/// always RespFromContext in ResponseOnly mode (no draw).
TaskCase sample_case(Rng& rng, TrainingMode mode);

}  // namespace cidg
