// Command-line entry point for the dialogue instruction-tuning pipeline.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cidg/chat.hpp"
#include "cidg/pipeline.hpp"

namespace {

cidg::RunConfig assemble_config(const std::string& config_path, const std::vector<std::string>& overrides,
                                const std::optional<std::uint64_t>& seed, const std::string& mode) {
  cidg::RunConfig cfg = config_path.empty() ? cidg::RunConfig::defaults() : cidg::load_run_config(config_path);
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw cidg::ConfigError("--set expects key=value, got '" + kv + "'");
    cidg::apply_setting(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (seed) cfg.seed = *seed;
  if (!mode.empty()) cfg.mode = cidg::parse_instruction_mode(mode);
  return cfg;
}

int chat(const cidg::RunConfig& cfg) {
  cfg.validate();
  const auto ckpt = cidg::load_checkpoint(cfg.resolve(cfg.dialog_checkpoint));
  const cidg::TransformerScorer scorer(ckpt.params);
  cidg::ChatSession session(scorer, ckpt.vocab, cfg.decode, ckpt.train.max_src_len);
  std::cerr << "chat ready. commands: /reset, /persona <text>, /quit\n";
  cidg::run_chat(session, std::cin, std::cout);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Instruction-guided dialogue generation: train, label, generate, evaluate, chat"};
  app.fallthrough();
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string mode;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "Run config file (key = value lines)")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "Seed for initialization, sampling and shuffling");
  app.add_option("--mode", mode, "Instruction mode")
      ->check(CLI::IsMember({"none", "fixed", "generated-naive", "generated-iterative", "oracle"}));
  app.add_option("--set", overrides, "Override a config key, e.g. --set train.epochs=5");

  auto* train_instgen = app.add_subcommand("train-instgen", "Train the instruction generator on triplets");
  auto* label = app.add_subcommand("label", "Label dialogue examples with generated instructions");
  auto* train_dialog = app.add_subcommand("train-dialog", "Multi-task train the dialogue model");
  auto* generate = app.add_subcommand("generate", "Generate responses for the test dialogues");
  auto* eval = app.add_subcommand("eval", "Score generations against the test responses");
  auto* chat_cmd = app.add_subcommand("chat", "Interactive session with the dialogue model");

  CLI11_PARSE(app, argc, argv);

  try {
    const cidg::RunConfig cfg = assemble_config(config_path, overrides, seed, mode);
    if (train_instgen->parsed()) cidg::cmd_train_instgen(cfg, std::cerr);
    else if (label->parsed()) cidg::cmd_label(cfg, std::cerr);
    else if (train_dialog->parsed()) cidg::cmd_train_dialog(cfg, std::cerr);
    else if (generate->parsed()) cidg::cmd_generate(cfg, std::cerr);
    else if (eval->parsed()) cidg::cmd_eval(cfg, std::cout);
    else if (chat_cmd->parsed()) return chat(cfg);
  } catch (const cidg::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
