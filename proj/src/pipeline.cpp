#include "cidg/pipeline.hpp"

#include <fstream>
#include <map>
#include <utility>

#include "cidg/taskformat.hpp"

namespace cidg {

namespace {

using json = nlohmann::json;

void append_dialogue_texts(const std::vector<Dialogue>& dialogues, std::vector<std::string>& texts) {
  for (const auto& d : dialogues) {
    for (const auto& p : d.persona) texts.push_back(p);
    for (const auto& t : d.turns) texts.push_back(t.text);
  }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed for " + path.string());
}

void require_file(const std::filesystem::path& path, const char* what) {
  if (!std::filesystem::exists(path))
    throw Error(std::string(what) + " not found: " + path.string() + " (set it in the config or CIDG_DATA_DIR)");
}

Params<float> fresh_model(const RunConfig& config, const Vocabulary& vocab) {
  ModelConfig mc = config.model;
  mc.vocab_size = vocab.size();
  return init_model(mc, config.seed);
}

EpochCallback epoch_logger(std::ostream& log, const char* stage) {
  return [&log, stage](std::size_t epoch, double loss) {
    log << stage << " epoch " << epoch << " loss " << loss << "\n";
  };
}

void save_history(const std::filesystem::path& ckpt, const TrainResult& result) {
  write_text(history_path(ckpt), history_json(result).dump(2) + "\n");
}

}  // namespace

GenerationRecord parse_generation(const std::string& line) {
  try {
    const json j = json::parse(line);
    GenerationRecord r;
    r.dialogue_id = j.at("dialogue_id").get<std::string>();
    r.turn_index = j.at("turn_index").get<std::size_t>();
    if (j.contains("instruction") && !j.at("instruction").is_null())
      r.instruction = j.at("instruction").get<std::string>();
    r.response = j.at("response").get<std::string>();
    return r;
  } catch (const json::exception& e) {
    throw CorpusError(std::string("malformed generation record: ") + e.what());
  }
}

std::string to_json_line(const GenerationRecord& r) {
  json j;
  j["dialogue_id"] = r.dialogue_id;
  j["turn_index"] = r.turn_index;
  j["instruction"] = r.instruction ? json(*r.instruction) : json(nullptr);
  j["response"] = r.response;
  return j.dump();
}

std::vector<GenerationRecord> load_generations(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusError("cannot open generations file " + path.string());
  std::vector<GenerationRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    try {
      out.push_back(parse_generation(line));
    } catch (const CorpusError& e) {
      throw CorpusError(path.string() + ": " + e.what(), line_no);
    }
  }
  return out;
}

void save_generations(const std::filesystem::path& path, const std::vector<GenerationRecord>& records) {
  std::string text;
  for (const auto& r : records) text += to_json_line(r) + "\n";
  write_text(path, text);
}

Vocabulary build_instgen_vocab(const std::vector<InstructionTriplet>& triplets,
                               const std::vector<Dialogue>& dialogues, std::size_t min_freq, std::size_t max_size) {
  std::vector<std::string> texts;
  for (const auto& t : triplets) {
    texts.push_back(t.instruction);
    texts.push_back(t.input);
    texts.push_back(t.output);
  }
  append_dialogue_texts(dialogues, texts);
  return build_vocab(texts, min_freq, max_size);
}

Vocabulary build_dialog_vocab(const std::vector<Dialogue>& dialogues, const std::vector<std::string>& instructions,
                              std::size_t min_freq, std::size_t max_size) {
  std::vector<std::string> texts;
  append_dialogue_texts(dialogues, texts);
  texts.insert(texts.end(), instructions.begin(), instructions.end());
  return build_vocab(texts, min_freq, max_size);
}

std::vector<LabelRecord> label_examples(const SequenceScorer& instgen, const Vocabulary& vocab,
                                        const std::vector<DialogueExample>& examples, const DecodeConfig& decode_cfg,
                                        std::size_t max_src_len) {
  std::vector<LabelRecord> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) {
    const SeqPair query = format_instgen(serialize_context(ex), ex.response, std::nullopt, vocab, max_src_len);
    std::string instruction = trim(decode(vocab, beam_search(instgen, query.source, decode_cfg)));
    LabelRecord r{ex.dialogue_id, ex.turn_index, instruction, false};
    if (instruction.empty()) {
      r.instruction = kFallbackInstruction;
      r.fallback = true;
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<std::string> round_robin(std::size_t count, const std::vector<std::string>& set) {
  if (set.empty()) throw ConfigError("fixed instruction set is empty");
  std::vector<std::string> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(set[i % set.size()]);
  return out;
}

std::vector<GenerationRecord> generate_records(const SequenceScorer& model, const Vocabulary& vocab,
                                               const std::vector<DialogueExample>& examples, InstructionMode mode,
                                               const std::vector<std::string>& fixed_instructions,
                                               const DecodeConfig& decode, std::size_t max_src_len) {
  std::vector<std::string> fixed;
  if (mode == InstructionMode::Fixed) fixed = round_robin(examples.size(), fixed_instructions);
  std::vector<GenerationRecord> out;
  out.reserve(examples.size());
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& ex = examples[i];
    Generation g;
    switch (mode) {
      case InstructionMode::None: g = generate_response_only(model, ex, vocab, decode, max_src_len); break;
      case InstructionMode::Fixed:
        g = generate_with_instruction(model, ex, fixed[i], vocab, decode, max_src_len);
        break;
      case InstructionMode::GeneratedNaive: g = generate_naive(model, ex, vocab, decode, max_src_len); break;
      case InstructionMode::GeneratedIterative: g = generate_iterative(model, ex, vocab, decode, max_src_len); break;
      case InstructionMode::Oracle: g = generate_oracle(model, ex, vocab, decode, max_src_len); break;
    }
    out.push_back({ex.dialogue_id, ex.turn_index, std::move(g.instruction), std::move(g.response)});
  }
  return out;
}

EvalReport evaluate_generations(const std::vector<GenerationRecord>& records,
                                const std::vector<DialogueExample>& examples) {
  std::map<std::pair<std::string, std::size_t>, const DialogueExample*> gold;
  for (const auto& ex : examples) gold[{ex.dialogue_id, ex.turn_index}] = &ex;
  std::map<std::pair<std::string, std::size_t>, bool> seen;
  std::vector<std::string> hyps, refs;
  for (const auto& r : records) {
    const auto key = std::make_pair(r.dialogue_id, r.turn_index);
    const auto it = gold.find(key);
    if (it == gold.end())
      throw CorpusError("generation for " + r.dialogue_id + " turn " + std::to_string(r.turn_index) +
                        " has no reference example");
    if (seen[key])
      throw CorpusError("duplicate generation for " + r.dialogue_id + " turn " + std::to_string(r.turn_index));
    seen[key] = true;
    hyps.push_back(r.response);
    refs.push_back(it->second->response);
  }
  return evaluate(hyps, refs);
}

json history_json(const TrainResult& result) {
  json kinds = json::object();
  for (std::size_t k = 0; k < kPairKindCount; ++k)
    kinds[to_string(static_cast<PairKind>(k))] = result.kind_counts[k];
  return {{"epoch_loss", result.epoch_loss},
          {"epoch_pairs", result.epoch_pairs},
          {"kind_counts", kinds},
          {"steps", result.steps}};
}

std::filesystem::path history_path(const std::filesystem::path& checkpoint) {
  auto p = checkpoint;
  p += ".history.json";
  return p;
}

TrainResult cmd_train_instgen(const RunConfig& config, std::ostream& log) {
  config.validate();
  const auto triplets_path = config.resolve(config.triplets);
  const auto dialogues_path = config.resolve(config.dialogues);
  require_file(triplets_path, "triplets file");
  const auto triplets = load_triplets(triplets_path);
  std::vector<Dialogue> dialogues;
  if (std::filesystem::exists(dialogues_path)) dialogues = load_dialogues(dialogues_path);

  const Vocabulary vocab = build_instgen_vocab(triplets, dialogues, config.vocab_min_freq, config.model.vocab_size);
  Params<float> params = fresh_model(config, vocab);
  const TrainConfig tc = config.instgen_train();
  log << "training instruction generator on " << triplets.size() << " triplets, vocabulary " << vocab.size()
      << "\n";
  TrainResult result = train(params, triplets, vocab, tc, epoch_logger(log, "instgen"));

  const auto out = config.resolve(config.instgen_checkpoint);
  CheckpointMeta meta{"instgen", "instgen", config.seed, tc.epochs,
                      result.epoch_loss.empty() ? 0.0 : result.epoch_loss.back()};
  save_checkpoint(Checkpoint{tc, vocab, std::move(params), meta}, out);
  save_history(out, result);
  log << "wrote " << out.string() << "\n";
  return result;
}

std::vector<LabelRecord> cmd_label(const RunConfig& config, std::ostream& log) {
  config.validate();
  const auto ckpt_path = config.resolve(config.instgen_checkpoint);
  const auto dialogues_path = config.resolve(config.dialogues);
  require_file(ckpt_path, "instruction-generator checkpoint");
  require_file(dialogues_path, "dialogues file");
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const auto examples = expand_examples(load_dialogues(dialogues_path));
  const TransformerScorer scorer(ckpt.params);
  auto labels = label_examples(scorer, ckpt.vocab, examples, config.decode, ckpt.train.max_src_len);

  std::size_t fallbacks = 0;
  for (const auto& l : labels) fallbacks += l.fallback ? 1 : 0;
  const auto out = config.resolve(config.labeled);
  save_labels(out, labels);
  log << "labeled " << labels.size() << " examples (" << fallbacks << " fallback) -> " << out.string() << "\n";
  return labels;
}

TrainResult cmd_train_dialog(const RunConfig& config, std::ostream& log) {
  config.validate();
  const auto dialogues_path = config.resolve(config.dialogues);
  require_file(dialogues_path, "dialogues file");
  const auto dialogues = load_dialogues(dialogues_path);
  const auto examples = expand_examples(dialogues);

  std::vector<std::string> instructions;
  TrainingMode training_mode = TrainingMode::Full;
  switch (config.mode) {
    case InstructionMode::None: training_mode = TrainingMode::ResponseOnly; break;
    case InstructionMode::Fixed: instructions = round_robin(examples.size(), config.fixed_instructions); break;
    case InstructionMode::GeneratedNaive:
    case InstructionMode::GeneratedIterative:
    case InstructionMode::Oracle: {
      const auto labeled_path = config.resolve(config.labeled);
      require_file(labeled_path, "labeled file");
      for (auto& ex : join_labels(examples, load_labels(labeled_path))) instructions.push_back(ex.instruction);
      break;
    }
  }

  const Vocabulary vocab =
      build_dialog_vocab(dialogues, instructions, config.vocab_min_freq, config.model.vocab_size);
  Params<float> params = fresh_model(config, vocab);
  const TrainConfig tc = config.dialog_train();
  log << "training dialogue model (" << to_string(config.mode) << ") on " << examples.size()
      << " examples, vocabulary " << vocab.size() << "\n";
  const PairSource pairs = dialogue_pairs(examples, training_mode == TrainingMode::Full ? &instructions : nullptr,
                                          vocab, training_mode, tc.max_src_len);
  TrainResult result = train(params, examples.size(), pairs, tc, epoch_logger(log, "dialog"));

  const auto out = config.resolve(config.dialog_checkpoint);
  CheckpointMeta meta{"dialog", to_string(config.mode), config.seed, tc.epochs,
                      result.epoch_loss.empty() ? 0.0 : result.epoch_loss.back()};
  save_checkpoint(Checkpoint{tc, vocab, std::move(params), meta}, out);
  save_history(out, result);
  log << "wrote " << out.string() << "\n";
  return result;
}

std::vector<GenerationRecord> cmd_generate(const RunConfig& config, std::ostream& log) {
  config.validate();
  const auto ckpt_path = config.resolve(config.dialog_checkpoint);
  const auto test_path = config.resolve(config.test_dialogues);
  require_file(ckpt_path, "dialogue checkpoint");
  require_file(test_path, "test dialogues file");
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const auto examples = expand_examples(load_dialogues(test_path));
  const TransformerScorer scorer(ckpt.params);
  auto records = generate_records(scorer, ckpt.vocab, examples, config.mode, config.fixed_instructions,
                                  config.decode, ckpt.train.max_src_len);
  const auto out = config.resolve(config.generations);
  save_generations(out, records);
  log << "generated " << records.size() << " responses (" << to_string(config.mode) << ") -> " << out.string()
      << "\n";
  return records;
}

EvalReport cmd_eval(const RunConfig& config, std::ostream& log) {
  const auto gen_path = config.resolve(config.generations);
  const auto test_path = config.resolve(config.test_dialogues);
  require_file(gen_path, "generations file");
  require_file(test_path, "test dialogues file");
  const auto report = evaluate_generations(load_generations(gen_path), expand_examples(load_dialogues(test_path)));
  const auto out = config.resolve(config.report);
  write_text(out, report.to_json().dump(2) + "\n");
  std::string label = to_string(config.mode);
  if (config.mode == InstructionMode::Fixed) label += " (generic set)";
  log << format_report_table(report, label);
  return report;
}

}  // namespace cidg
