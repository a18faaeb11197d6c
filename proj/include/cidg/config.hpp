#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "cidg/decoding.hpp"
#include "cidg/model.hpp"
#include "cidg/training.hpp"

namespace cidg {

class ConfigError : public Error {
 public:
  using Error::Error;
};

enum class InstructionMode { None, Fixed, GeneratedNaive, GeneratedIterative, Oracle };

/// Accepts the CLI spelling ("generated-naive") and the underscore form.
InstructionMode parse_instruction_mode(std::string_view text);
std::string to_string(InstructionMode mode);

/// Everything a pipeline stage needs. Relative paths resolve against data_dir.
struct RunConfig {
  std::filesystem::path data_dir = ".";
  std::filesystem::path dialogues = "dialogues.jsonl";
  std::filesystem::path test_dialogues = "test_dialogues.jsonl";
  std::filesystem::path triplets = "triplets.jsonl";
  std::filesystem::path labeled = "labeled.jsonl";
  std::filesystem::path instgen_checkpoint = "instgen.ckpt";
  std::filesystem::path dialog_checkpoint = "dialog.ckpt";
  std::filesystem::path generations = "generations.jsonl";
  std::filesystem::path report = "report.json";

  ModelConfig model;
  TrainConfig train;
  std::size_t instgen_epochs = 40;
  DecodeConfig decode;
  std::size_t vocab_min_freq = 1;

  InstructionMode mode = InstructionMode::GeneratedIterative;
  std::vector<std::string> fixed_instructions = {
      "given a context, generate the next response",
      "continue the conversation with a relevant reply",
      "respond to the last utterance in the dialogue",
      "write a natural response to the dialogue history",
  };
  std::uint64_t seed = 42;

  /// data_dir from CIDG_DATA_DIR when set.
  static RunConfig defaults();

  std::filesystem::path resolve(const std::filesystem::path& p) const;
  /// TrainConfig for the instruction generator (instgen_epochs, shared seed).
  TrainConfig instgen_train() const;
  TrainConfig dialog_train() const;
  void validate() const;
};

/// Applies one `key = value` setting. Throws ConfigError naming the key.
void apply_setting(RunConfig& config, std::string_view key, std::string_view value);

/// Flat text format: one `key = value` per line, `#` starts a comment.
/// `fixed_instruction` may repeat; its first occurrence replaces the defaults.
RunConfig parse_run_config(std::string_view text, RunConfig base = RunConfig::defaults());
RunConfig load_run_config(const std::filesystem::path& path, RunConfig base = RunConfig::defaults());

/// Renders every key in the same format.
std::string to_text(const RunConfig& config);

}  // namespace cidg
