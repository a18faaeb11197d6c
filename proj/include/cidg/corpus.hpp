#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "cidg/common.hpp"

namespace cidg {

/// Raised for unreadable corpus files, malformed records and invariant
/// violations. Record-level problems carry the 1-based line number.
class CorpusError : public Error {
 public:
  CorpusError(const std::string& message, std::size_t line = 0)
      : Error(line ? "line " + std::to_string(line) + ": " + message : message), line_(line) {}

  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

enum class Speaker { A, B };

struct Turn {
  Speaker speaker = Speaker::A;
  std::string text;

  bool operator==(const Turn&) const = default;
};

struct Dialogue {
  std::string id;
  std::vector<std::string> persona;
  std::vector<Turn> turns;

  bool operator==(const Dialogue&) const = default;
};

/// One (context, response) training pair cut from a dialogue at turn_index.
/// `turns` holds turns[0..turn_index-1] of the source dialogue.
struct DialogueExample {
  std::string dialogue_id;
  std::size_t turn_index = 1;
  std::vector<std::string> persona;
  std::vector<Turn> turns;
  std::string response;

  bool operator==(const DialogueExample&) const = default;
};

struct InstructionTriplet {
  std::string instruction;
  std::string input;
  std::string output;

  bool operator==(const InstructionTriplet&) const = default;
};

struct LabeledExample {
  DialogueExample example;
  std::string instruction;
};

/// A row of labeled.jsonl. `fallback` marks records whose decoded
/// instruction was empty and was replaced by the fallback instruction.
struct LabelRecord {
  std::string dialogue_id;
  std::size_t turn_index = 0;
  std::string instruction;
  bool fallback = false;

  bool operator==(const LabelRecord&) const = default;
};

// Validation. Each throws CorpusError describing the first violation.
void validate(const Dialogue& dialogue);
void validate(const InstructionTriplet& triplet);

// One-record codecs for the JSONL schemas. Parsers validate.
Dialogue parse_dialogue(const std::string& line);
std::string to_json_line(const Dialogue& dialogue);
InstructionTriplet parse_triplet(const std::string& line);
std::string to_json_line(const InstructionTriplet& triplet);
LabelRecord parse_label(const std::string& line);
std::string to_json_line(const LabelRecord& record);

std::vector<Dialogue> load_dialogues(const std::filesystem::path& path);
std::vector<InstructionTriplet> load_triplets(const std::filesystem::path& path);
std::vector<LabelRecord> load_labels(const std::filesystem::path& path);

void save_dialogues(const std::filesystem::path& path, const std::vector<Dialogue>& dialogues);
void save_triplets(const std::filesystem::path& path, const std::vector<InstructionTriplet>& triplets);
void save_labels(const std::filesystem::path& path, const std::vector<LabelRecord>& labels);

/// Cuts every dialogue into T-1 examples, ordered by (dialogue, turn_index).
std::vector<DialogueExample> expand_examples(const std::vector<Dialogue>& dialogues);

/// Pairs examples with instructions by position.
std::vector<LabeledExample> attach_instructions(const std::vector<DialogueExample>& examples,
                                                const std::vector<std::string>& instructions);

/// Joins label records onto examples by (dialogue_id, turn_index). Every
/// example must have exactly one label and every label must resolve.
std::vector<LabeledExample> join_labels(const std::vector<DialogueExample>& examples,
                                        const std::vector<LabelRecord>& labels);

/// Whitespace-trimmed copy.
std::string trim(const std::string& text);

}  // namespace cidg
