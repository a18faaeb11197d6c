#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "cidg/checkpoint.hpp"
#include "cidg/config.hpp"
#include "cidg/corpus.hpp"
#include "cidg/decoding.hpp"
#include "cidg/metrics.hpp"
#include "cidg/training.hpp"

namespace cidg {

inline constexpr const char* kFallbackInstruction = "respond to the dialogue";

/// A row of generations.jsonl. `instruction` is null in mode none.
struct GenerationRecord {
  std::string dialogue_id;
  std::size_t turn_index = 0;
  std::optional<std::string> instruction;
  std::string response;

  bool operator==(const GenerationRecord&) const = default;
};

GenerationRecord parse_generation(const std::string& line);
std::string to_json_line(const GenerationRecord& record);
std::vector<GenerationRecord> load_generations(const std::filesystem::path& path);
void save_generations(const std::filesystem::path& path, const std::vector<GenerationRecord>& records);

// In-memory building blocks of the stages.

/// Vocabulary over triplet fields plus dialogue personas and turns.
Vocabulary build_instgen_vocab(const std::vector<InstructionTriplet>& triplets,
                               const std::vector<Dialogue>& dialogues, std::size_t min_freq, std::size_t max_size);

/// Vocabulary over dialogue personas, turns and instructions.
Vocabulary build_dialog_vocab(const std::vector<Dialogue>& dialogues, const std::vector<std::string>& instructions,
                              std::size_t min_freq, std::size_t max_size);

/// Decodes an instruction per example with x = serialized context and
/// y = response. Empty decodes get the fallback instruction and a flag.
std::vector<LabelRecord> label_examples(const SequenceScorer& instgen, const Vocabulary& vocab,
                                        const std::vector<DialogueExample>& examples, const DecodeConfig& decode,
                                        std::size_t max_src_len);

/// Entry i % set.size() for example i.
std::vector<std::string> round_robin(std::size_t count, const std::vector<std::string>& set);

/// Per-example instruction/response under one inference mode, in input order.
std::vector<GenerationRecord> generate_records(const SequenceScorer& model, const Vocabulary& vocab,
                                               const std::vector<DialogueExample>& examples, InstructionMode mode,
                                               const std::vector<std::string>& fixed_instructions,
                                               const DecodeConfig& decode, std::size_t max_src_len);

/// Scores records against the gold responses of `examples`, matched by
/// (dialogue_id, turn_index). Throws on unmatched or duplicate records.
EvalReport evaluate_generations(const std::vector<GenerationRecord>& records,
                                const std::vector<DialogueExample>& examples);

/// Loss curve and sampling counts, written next to each checkpoint.
nlohmann::json history_json(const TrainResult& result);
std::filesystem::path history_path(const std::filesystem::path& checkpoint);

// File-level stages. Each reads and writes the paths named in the config.

TrainResult cmd_train_instgen(const RunConfig& config, std::ostream& log);
std::vector<LabelRecord> cmd_label(const RunConfig& config, std::ostream& log);
TrainResult cmd_train_dialog(const RunConfig& config, std::ostream& log);
std::vector<GenerationRecord> cmd_generate(const RunConfig& config, std::ostream& log);
EvalReport cmd_eval(const RunConfig& config, std::ostream& log);

}  // namespace cidg
