#include <fstream>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "cidg/chat.hpp"
#include "cidg/pipeline.hpp"
#include "support/synthetic.hpp"
#include "support/tempdir.hpp"

using namespace cidg;
namespace syn = cidg::testing;

namespace {

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

/// A small workspace with train/test dialogues and triplets.
struct Workspace {
  syn::TempDir dir;
  syn::SyntheticCorpus train = syn::make_intent_corpus(12, 1, 0.5, "tr");
  syn::SyntheticCorpus test = syn::make_intent_corpus(6, 2, 0.5, "te");
  RunConfig config;

  Workspace() {
    save_dialogues(dir / "dialogues.jsonl", train.dialogues);
    save_dialogues(dir / "test_dialogues.jsonl", test.dialogues);
    save_triplets(dir / "triplets.jsonl", syn::make_triplets(train));
    config = RunConfig{};
    config.data_dir = dir.path();
    config.model.d_model = 16;
    config.model.n_heads = 2;
    config.model.n_enc_layers = 1;
    config.model.n_dec_layers = 1;
    config.model.d_ff = 32;
    config.model.max_positions = 64;
    config.train.epochs = 2;
    config.train.batch_size = 4;
    config.train.max_src_len = 64;
    config.instgen_epochs = 2;
    config.decode.max_len = 8;
    config.seed = 11;
  }
};

std::vector<std::pair<std::string, std::size_t>> ids(const std::vector<GenerationRecord>& records) {
  std::vector<std::pair<std::string, std::size_t>> out;
  for (const auto& r : records) out.emplace_back(r.dialogue_id, r.turn_index);
  return out;
}

// Case 1 -> "say <last response word>", case 3 -> "say maybe",
// case 2 -> instruction words after "say", case 4 -> "generic".
struct ScriptedModel {
  Vocabulary vocab;
  explicit ScriptedModel(Vocabulary v) : vocab(std::move(v)) {}

  FunctionScorer scorer() const {
    const std::size_t n = vocab.size();
    return FunctionScorer(n, [this, n](std::span<const TokenId> src, std::span<const TokenId> prefix) {
      const TokenId say = vocab.id("say");
      std::vector<TokenId> script;
      if (src[0] == tok::kGenInst) {
        const bool has_rsp = std::find(src.begin(), src.end(), tok::kRsp) != src.end();
        script = {say, has_rsp ? src.back() : vocab.id("maybe")};
      } else if (src.size() > 1 && src[1] == tok::kIns) {
        for (std::size_t i = 2; i < src.size() && !tok::is_special(src[i]); ++i)
          if (src[i] != say) script.push_back(src[i]);
      }
      if (script.empty()) script = {vocab.id("generic")};
      const TokenId want = prefix.size() < script.size() ? script[prefix.size()] : tok::kEos;
      std::vector<double> lp(n, std::log(0.1 / double(n - 1)));
      lp[static_cast<std::size_t>(want)] = std::log(0.9);
      return lp;
    });
  }
};

}  // namespace

TEST(InstructionMode, ParsesBothSpellings) {
  EXPECT_EQ(parse_instruction_mode("generated-iterative"), InstructionMode::GeneratedIterative);
  EXPECT_EQ(parse_instruction_mode("generated_naive"), InstructionMode::GeneratedNaive);
  EXPECT_EQ(parse_instruction_mode("none"), InstructionMode::None);
  EXPECT_EQ(to_string(InstructionMode::Oracle), "oracle");
  EXPECT_THROW(parse_instruction_mode("sometimes"), ConfigError);
}

TEST(RunConfig, ParseOverridesAndComments) {
  const auto c = parse_run_config(
      "# sample\n"
      "mode = fixed\n"
      "seed = 7\n"
      "model.d_model = 32   # trailing comment\n"
      "train.learning_rate = 0.001\n"
      "decode.beam_size = 5\n"
      "fixed_instruction = reply briefly\n"
      "fixed_instruction = reply warmly\n"
      "fixed_instruction = reply with a question\n",
      RunConfig{});
  EXPECT_EQ(c.mode, InstructionMode::Fixed);
  EXPECT_EQ(c.seed, 7u);
  EXPECT_EQ(c.model.d_model, 32u);
  EXPECT_DOUBLE_EQ(c.train.learning_rate, 0.001);
  EXPECT_EQ(c.decode.beam_size, 5u);
  EXPECT_EQ(c.fixed_instructions,
            (std::vector<std::string>{"reply briefly", "reply warmly", "reply with a question"}));
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.dialog_train().seed, 7u);
  EXPECT_EQ(c.instgen_train().epochs, c.instgen_epochs);
}

TEST(RunConfig, TextRoundTrip) {
  RunConfig c;
  c.mode = InstructionMode::Oracle;
  c.train.epochs = 3;
  c.decode.length_alpha = 0.5;
  const auto back = parse_run_config(to_text(c), RunConfig{});
  EXPECT_EQ(to_text(back), to_text(c));
  EXPECT_EQ(back.decode, c.decode);
  EXPECT_EQ(back.train, c.train);
  EXPECT_EQ(back.model, c.model);
}

TEST(RunConfig, Errors) {
  EXPECT_THROW(parse_run_config("nonsense\n", RunConfig{}), ConfigError);
  EXPECT_THROW(parse_run_config("no.such.key = 1\n", RunConfig{}), ConfigError);
  EXPECT_THROW(parse_run_config("seed = -1\n", RunConfig{}), ConfigError);
  EXPECT_THROW(parse_run_config("train.learning_rate = fast\n", RunConfig{}), ConfigError);
  try {
    parse_run_config("seed = 1\nmode = loud\n", RunConfig{});
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
}

TEST(RunConfig, FixedSetNeedsThreeToFive) {
  RunConfig c;
  c.mode = InstructionMode::Fixed;
  EXPECT_NO_THROW(c.validate());
  c.fixed_instructions.resize(2);
  EXPECT_THROW(c.validate(), ConfigError);
  c.fixed_instructions = {"a", "b", "c", "d", "e", "f"};
  EXPECT_THROW(c.validate(), ConfigError);
  c.mode = InstructionMode::None;
  EXPECT_NO_THROW(c.validate());
}

TEST(RunConfig, LengthsMustFitThePositionTable) {
  RunConfig c;
  c.model.max_positions = 64;
  c.train.max_src_len = 64;
  c.decode.max_len = 65;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(GenerationRecord, JsonRoundTrip) {
  syn::TempDir dir;
  const std::vector<GenerationRecord> records = {
      {"d1", 1, std::string("talk about the weather"), "it is sunny"},
      {"d1", 3, std::nullopt, "ok"},
  };
  save_generations(dir / "g.jsonl", records);
  EXPECT_EQ(load_generations(dir / "g.jsonl"), records);
  EXPECT_NE(to_json_line(records[1]).find("\"instruction\":null"), std::string::npos);
  EXPECT_THROW(parse_generation("{\"dialogue_id\": 3}"), CorpusError);
}

TEST(RoundRobin, CyclesThroughTheSet) {
  const std::vector<std::string> set = {"a", "b", "c", "d"};
  const auto out = round_robin(8, set);
  EXPECT_EQ(out, (std::vector<std::string>{"a", "b", "c", "d", "a", "b", "c", "d"}));
  EXPECT_THROW(round_robin(3, {}), ConfigError);
}

TEST(LabelExamples, FallbackForEmptyDecodes) {
  const auto corpus = syn::make_intent_corpus(5, 3, 0.5);
  const auto vocab = syn::corpus_vocab(corpus);
  const auto examples = expand_examples(corpus.dialogues);
  const FunctionScorer eos(vocab.size(), [&vocab](std::span<const TokenId>, std::span<const TokenId>) {
    std::vector<double> lp(vocab.size(), std::log(0.01));
    lp[tok::kEos] = 0.0;
    return lp;
  });
  const auto labels = label_examples(eos, vocab, examples, DecodeConfig{}, 64);
  ASSERT_EQ(labels.size(), examples.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    EXPECT_EQ(labels[i].dialogue_id, examples[i].dialogue_id);
    EXPECT_EQ(labels[i].turn_index, examples[i].turn_index);
    EXPECT_EQ(labels[i].instruction, kFallbackInstruction);
    EXPECT_TRUE(labels[i].fallback);
  }
}

TEST(GenerateRecords, AllModesCoverTheSameExamples) {
  const auto corpus = syn::make_intent_corpus(6, 4, 0.5);
  const auto examples = expand_examples(corpus.dialogues);
  std::vector<std::string> texts = {"say maybe generic"};
  const ScriptedModel m(build_dialog_vocab(corpus.dialogues, texts, 1, 1000));
  const auto scorer = m.scorer();
  const std::vector<std::string> fixed = {"say alpha", "say beta", "say gamma"};
  std::optional<std::vector<std::pair<std::string, std::size_t>>> expected;
  for (auto mode : {InstructionMode::None, InstructionMode::Fixed, InstructionMode::GeneratedNaive,
                    InstructionMode::GeneratedIterative, InstructionMode::Oracle}) {
    const auto records = generate_records(scorer, m.vocab, examples, mode, fixed, DecodeConfig{}, 64);
    if (!expected) expected = ids(records);
    EXPECT_EQ(ids(records), *expected) << to_string(mode);
    for (const auto& r : records) EXPECT_EQ(r.instruction.has_value(), mode != InstructionMode::None);
  }
}

TEST(GenerateRecords, OracleRecoversWhatTheContextCannot) {
  // The scripted oracle instruction copies the gold response's last word;
  // the iterative one can only guess.
  const auto corpus = syn::make_intent_corpus(12, 5, 0.5);
  const auto examples = expand_examples(corpus.dialogues);
  std::vector<std::string> texts = {"say maybe generic"};
  const ScriptedModel m(build_dialog_vocab(corpus.dialogues, texts, 1, 1000));
  const auto scorer = m.scorer();
  const auto last_word = [](const std::string& s) { return metric_tokenize(s).back(); };
  std::size_t oracle_hits = 0, iterative_hits = 0;
  const auto oracle = generate_records(scorer, m.vocab, examples, InstructionMode::Oracle, {}, DecodeConfig{}, 64);
  const auto iter =
      generate_records(scorer, m.vocab, examples, InstructionMode::GeneratedIterative, {}, DecodeConfig{}, 64);
  for (std::size_t i = 0; i < examples.size(); ++i) {
    oracle_hits += oracle[i].response == last_word(examples[i].response);
    iterative_hits += iter[i].response == last_word(examples[i].response);
  }
  EXPECT_EQ(oracle_hits, examples.size());
  EXPECT_GE(oracle_hits, iterative_hits);
}

TEST(EvaluateGenerations, GoldScoresOneAndOrderDoesNotMatter) {
  const auto corpus = syn::make_intent_corpus(8, 6, 0.5);
  const auto examples = expand_examples(corpus.dialogues);
  std::vector<GenerationRecord> gold;
  for (const auto& ex : examples) gold.push_back({ex.dialogue_id, ex.turn_index, std::nullopt, ex.response});
  const auto report = evaluate_generations(gold, examples);
  EXPECT_DOUBLE_EQ(report.bleu1, 1.0);
  EXPECT_DOUBLE_EQ(report.bleu2, 1.0);

  auto shuffled = gold;
  std::reverse(shuffled.begin(), shuffled.end());
  std::swap(shuffled[0], shuffled[3]);
  EXPECT_EQ(evaluate_generations(shuffled, examples), report);

  auto extra = gold;
  extra.push_back({"missing", 1, std::nullopt, "x"});
  EXPECT_THROW(evaluate_generations(extra, examples), CorpusError);
  auto dup = gold;
  dup.push_back(gold[0]);
  EXPECT_THROW(evaluate_generations(dup, examples), CorpusError);
}

TEST(Commands, MissingInputsHaveActionableErrors) {
  syn::TempDir dir;
  RunConfig c;
  c.data_dir = dir.path();
  try {
    cmd_train_instgen(c, std::cerr);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("triplets"), std::string::npos) << e.what();
  }
  EXPECT_THROW(cmd_label(c, std::cerr), Error);
  EXPECT_THROW(cmd_generate(c, std::cerr), Error);
  EXPECT_THROW(cmd_eval(c, std::cerr), Error);
}

TEST(Commands, TrainDialogNeedsLabelsForGeneratedModes) {
  Workspace w;
  w.config.mode = InstructionMode::GeneratedIterative;
  try {
    cmd_train_dialog(w.config, std::cerr);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("labeled"), std::string::npos) << e.what();
  }
}

TEST(Commands, FullPipelineIsReproducible) {
  Workspace w;
  std::ostringstream log;
  const auto instgen = cmd_train_instgen(w.config, log);
  EXPECT_EQ(instgen.epoch_pairs, (std::vector<std::size_t>{12, 12}));
  const std::string ckpt1 = read_file(w.dir / "instgen.ckpt");
  EXPECT_TRUE(std::filesystem::exists(w.dir / "instgen.ckpt.history.json"));

  const auto labels = cmd_label(w.config, log);
  const auto examples = expand_examples(w.train.dialogues);
  ASSERT_EQ(labels.size(), examples.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    EXPECT_EQ(labels[i].dialogue_id, examples[i].dialogue_id);
    EXPECT_FALSE(trim(labels[i].instruction).empty());
  }
  EXPECT_EQ(load_labels(w.dir / "labeled.jsonl"), labels);

  const auto dialog = cmd_train_dialog(w.config, log);
  EXPECT_EQ(dialog.epoch_pairs, (std::vector<std::size_t>{12, 12}));
  const auto gens = cmd_generate(w.config, log);
  EXPECT_EQ(gens.size(), expand_examples(w.test.dialogues).size());
  const auto report = cmd_eval(w.config, log);
  EXPECT_EQ(report.hypotheses, gens.size());
  EXPECT_EQ(EvalReport::from_json(nlohmann::json::parse(read_file(w.dir / "report.json"))), report);

  // Second run from scratch.
  const std::string labels1 = read_file(w.dir / "labeled.jsonl"), dialog1 = read_file(w.dir / "dialog.ckpt"),
                    gens1 = read_file(w.dir / "generations.jsonl"), report1 = read_file(w.dir / "report.json");
  cmd_train_instgen(w.config, log);
  cmd_label(w.config, log);
  cmd_train_dialog(w.config, log);
  cmd_generate(w.config, log);
  cmd_eval(w.config, log);
  EXPECT_EQ(read_file(w.dir / "instgen.ckpt"), ckpt1);
  EXPECT_EQ(read_file(w.dir / "labeled.jsonl"), labels1);
  EXPECT_EQ(read_file(w.dir / "dialog.ckpt"), dialog1);
  EXPECT_EQ(read_file(w.dir / "generations.jsonl"), gens1);
  EXPECT_EQ(read_file(w.dir / "report.json"), report1);
}

TEST(Commands, ModeNoneTrainsResponseOnly) {
  Workspace w;
  w.config.mode = InstructionMode::None;
  std::ostringstream log;
  const auto r = cmd_train_dialog(w.config, log);
  EXPECT_EQ(r.kind_counts[static_cast<std::size_t>(PairKind::Case4)], 24u);
  const auto gens = cmd_generate(w.config, log);
  for (const auto& g : gens) EXPECT_FALSE(g.instruction.has_value());
  const auto history = nlohmann::json::parse(read_file(w.dir / "dialog.ckpt.history.json"));
  EXPECT_EQ(history["kind_counts"]["resp_from_context"], 24);
}

TEST(Commands, FixedModeUsesTheGenericSet) {
  Workspace w;
  w.config.mode = InstructionMode::Fixed;
  std::ostringstream log;
  const auto r = cmd_train_dialog(w.config, log);
  std::size_t total = 0;
  for (std::size_t k : r.kind_counts) total += k;
  EXPECT_EQ(total, 24u);
  const auto gens = cmd_generate(w.config, log);
  for (std::size_t i = 0; i < gens.size(); ++i)
    EXPECT_EQ(gens[i].instruction, w.config.fixed_instructions[i % w.config.fixed_instructions.size()]);
  cmd_eval(w.config, log);
  EXPECT_NE(log.str().find("generic set"), std::string::npos);
}

namespace {

struct ChatFixture {
  Vocabulary vocab = build_vocab(std::vector<std::string>{"say maybe generic hello there friend"}, 1, 100);
  std::vector<std::vector<TokenId>> sources;  // every source the model was queried with
  FunctionScorer model{vocab.size(), [this](std::span<const TokenId> src, std::span<const TokenId> prefix) {
                         if (prefix.empty()) sources.emplace_back(src.begin(), src.end());
                         std::vector<double> lp(vocab.size(), std::log(0.01));
                         const TokenId want = prefix.empty() ? vocab.id(src[0] == tok::kGenInst ? "maybe" : "friend")
                                                             : tok::kEos;
                         lp[static_cast<std::size_t>(want)] = 0.0;
                         return lp;
                       }};
};

}  // namespace

TEST(Chat, ScriptedSession) {
  ChatFixture f;
  ChatSession session(f.model, f.vocab, DecodeConfig{}, 64);
  std::istringstream in("hello there\n/persona i like rain\nhello\n/unknown\n/reset\nhello there\n/quit\nignored\n");
  std::ostringstream out;
  run_chat(session, in, out);
  const std::string expected =
      "instruction: maybe\nbot: friend\n"
      "[persona set]\n"
      "instruction: maybe\nbot: friend\n"
      "unknown command /unknown (commands: /reset, /persona <text>, /quit)\n"
      "[context cleared]\n"
      "instruction: maybe\nbot: friend\n";
  EXPECT_EQ(out.str(), expected);
  EXPECT_EQ(session.turns().size(), 2u);
}

TEST(Chat, PersonaReachesTheModel) {
  ChatFixture f;
  ChatSession session(f.model, f.vocab, DecodeConfig{}, 64);
  session.respond("hello");
  for (const auto& s : f.sources) EXPECT_EQ(std::count(s.begin(), s.end(), tok::kPer), 0);
  f.sources.clear();
  session.set_persona("  i like rain  ");
  EXPECT_EQ(session.persona(), (std::vector<std::string>{"i like rain"}));
  session.respond("hello");
  ASSERT_FALSE(f.sources.empty());
  for (const auto& s : f.sources) EXPECT_EQ(std::count(s.begin(), s.end(), tok::kPer), 1);
  session.set_persona("");
  EXPECT_TRUE(session.persona().empty());
}

TEST(Chat, ResetRestoresTheFirstTurnBehaviour) {
  ChatFixture f;
  ChatSession session(f.model, f.vocab, DecodeConfig{}, 64);
  session.respond("hello there");
  const auto first_sources = f.sources;
  session.respond("hello again");
  EXPECT_EQ(session.turns().size(), 4u);
  session.reset();
  EXPECT_TRUE(session.turns().empty());
  f.sources.clear();
  session.respond("hello there");
  EXPECT_EQ(f.sources, first_sources);
  EXPECT_EQ(session.pending_example().turns.size(), 2u);
}

TEST(Chat, FailedTurnIsWithdrawn) {
  Vocabulary vocab = build_vocab(std::vector<std::string>{"hello"}, 1, 100);
  const FunctionScorer dead(vocab.size(), [&vocab](std::span<const TokenId>, std::span<const TokenId>) {
    return std::vector<double>(vocab.size(), -std::numeric_limits<double>::infinity());
  });
  ChatSession session(dead, vocab, DecodeConfig{}, 64);
  EXPECT_THROW(session.respond("hello"), DecodeError);
  EXPECT_TRUE(session.turns().empty());
  std::istringstream in("hello\n");
  std::ostringstream out;
  run_chat(session, in, out);
  EXPECT_EQ(out.str().rfind("error: ", 0), 0u);
}
