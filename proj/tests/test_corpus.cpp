#include <fstream>

#include <gtest/gtest.h>

#include "cidg/corpus.hpp"
#include "support/synthetic.hpp"
#include "support/tempdir.hpp"

using namespace cidg;
using cidg::testing::TempDir;

namespace {

void write(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

Dialogue three_turns() {
  return {"d1", {}, {{Speaker::A, "u0"}, {Speaker::B, "u1"}, {Speaker::A, "u2"}}};
}

}  // namespace

TEST(LoadDialogues, EmptyFileGivesEmptyList) {
  TempDir dir;
  write(dir / "d.jsonl", "");
  EXPECT_TRUE(load_dialogues(dir / "d.jsonl").empty());
}

TEST(LoadDialogues, ReadsAlternatingTurns) {
  TempDir dir;
  write(dir / "d.jsonl",
        R"({"id":"x","persona":[],"turns":[{"speaker":"A","text":"hi"},{"speaker":"B","text":"yo"},)"
        R"({"speaker":"A","text":"ok"}]})"
        "\n");
  const auto ds = load_dialogues(dir / "d.jsonl");
  ASSERT_EQ(ds.size(), 1u);
  EXPECT_EQ(ds[0].turns.size(), 3u);
  EXPECT_EQ(ds[0].turns[2].text, "ok");
}

TEST(LoadDialogues, MissingTurnsNamesLineOne) {
  TempDir dir;
  write(dir / "d.jsonl", R"({"id":"x","persona":[]})" "\n");
  try {
    load_dialogues(dir / "d.jsonl");
    FAIL() << "expected CorpusError";
  } catch (const CorpusError& e) {
    EXPECT_EQ(e.line(), 1u);
    EXPECT_NE(std::string(e.what()).find("line 1"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("turns"), std::string::npos);
  }
}

TEST(LoadDialogues, RejectsInvariantViolations) {
  TempDir dir;
  write(dir / "short.jsonl", R"({"id":"x","turns":[{"speaker":"A","text":"hi"}]})" "\n");
  EXPECT_THROW(load_dialogues(dir / "short.jsonl"), CorpusError);
  write(dir / "order.jsonl",
        R"({"id":"x","turns":[{"speaker":"B","text":"hi"},{"speaker":"A","text":"yo"}]})" "\n");
  EXPECT_THROW(load_dialogues(dir / "order.jsonl"), CorpusError);
  write(dir / "blank.jsonl",
        R"({"id":"x","turns":[{"speaker":"A","text":"  "},{"speaker":"B","text":"yo"}]})" "\n");
  EXPECT_THROW(load_dialogues(dir / "blank.jsonl"), CorpusError);
  const std::string ok = R"({"id":"x","turns":[{"speaker":"A","text":"a"},{"speaker":"B","text":"b"}]})";
  write(dir / "dup.jsonl", ok + "\n" + ok + "\n");
  EXPECT_THROW(load_dialogues(dir / "dup.jsonl"), CorpusError);
  EXPECT_THROW(load_dialogues(dir / "absent.jsonl"), CorpusError);
}

TEST(LoadDialogues, ErrorOnLaterLineReportsThatLine) {
  TempDir dir;
  const std::string ok = R"({"id":"a","turns":[{"speaker":"A","text":"a"},{"speaker":"B","text":"b"}]})";
  write(dir / "d.jsonl", ok + "\n\n{not json}\n");
  try {
    load_dialogues(dir / "d.jsonl");
    FAIL();
  } catch (const CorpusError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
}

TEST(ExpandExamples, ThreeTurnsGiveTwoExamples) {
  const auto ex = expand_examples({three_turns()});
  ASSERT_EQ(ex.size(), 2u);
  EXPECT_EQ(ex[0].turn_index, 1u);
  ASSERT_EQ(ex[0].turns.size(), 1u);
  EXPECT_EQ(ex[0].turns[0].text, "u0");
  EXPECT_EQ(ex[0].response, "u1");
  EXPECT_EQ(ex[1].turns.size(), 2u);
  EXPECT_EQ(ex[1].response, "u2");
}

TEST(ExpandExamples, TwoTurnsGiveOneExample) {
  Dialogue d{"d", {}, {{Speaker::A, "a"}, {Speaker::B, "b"}}};
  EXPECT_EQ(expand_examples({d}).size(), 1u);
}

TEST(ExpandExamples, PersonaReachesEveryExample) {
  Dialogue d = three_turns();
  d.persona = {"p1"};
  for (const auto& ex : expand_examples({d})) EXPECT_EQ(ex.persona, std::vector<std::string>{"p1"});
}

TEST(ExpandExamples, CountIsSumOfTurnsMinusOne) {
  std::vector<Dialogue> ds;
  std::size_t expected = 0;
  for (std::size_t t = 2; t <= 7; ++t) {
    Dialogue d{"d" + std::to_string(t), {}, {}};
    for (std::size_t i = 0; i < t; ++i) d.turns.push_back({i % 2 ? Speaker::B : Speaker::A, "w" + std::to_string(i)});
    ds.push_back(d);
    expected += t - 1;
  }
  const auto ex = expand_examples(ds);
  EXPECT_EQ(ex.size(), expected);
  for (std::size_t i = 1; i < ex.size(); ++i) {
    if (ex[i].dialogue_id == ex[i - 1].dialogue_id) EXPECT_EQ(ex[i].turn_index, ex[i - 1].turn_index + 1);
    else EXPECT_EQ(ex[i].turn_index, 1u);
  }
}

TEST(LoadTriplets, ReadsAndValidates) {
  TempDir dir;
  write(dir / "t.jsonl", R"({"instruction":"summarize","input":"a b","output":"c"})" "\n");
  const auto ts = load_triplets(dir / "t.jsonl");
  ASSERT_EQ(ts.size(), 1u);
  EXPECT_EQ(ts[0], (InstructionTriplet{"summarize", "a b", "c"}));
  write(dir / "bad.jsonl", R"({"instruction":"summarize","input":"a b","output":""})" "\n");
  EXPECT_THROW(load_triplets(dir / "bad.jsonl"), CorpusError);
  write(dir / "empty.jsonl", "");
  EXPECT_TRUE(load_triplets(dir / "empty.jsonl").empty());
  write(dir / "noinput.jsonl", R"({"instruction":"say hi","input":"","output":"hi"})" "\n");
  EXPECT_EQ(load_triplets(dir / "noinput.jsonl").size(), 1u);
}

TEST(AttachInstructions, PairsByPosition) {
  const auto ex = expand_examples({three_turns()});
  const auto labeled = attach_instructions(ex, {"first", "second"});
  ASSERT_EQ(labeled.size(), 2u);
  EXPECT_EQ(labeled[0].instruction, "first");
  EXPECT_EQ(labeled[1].example, ex[1]);
}

TEST(AttachInstructions, Errors) {
  const auto ex = expand_examples({three_turns()});
  EXPECT_THROW(attach_instructions(ex, {"only one"}), CorpusError);
  try {
    attach_instructions(ex, {"", "x"});
    FAIL();
  } catch (const CorpusError& e) {
    EXPECT_NE(std::string(e.what()).find("position 0"), std::string::npos);
  }
}

TEST(JoinLabels, ResolvesByKeyAndRejectsStrays) {
  const auto ex = expand_examples({three_turns()});
  std::vector<LabelRecord> labels = {{"d1", 2, "second", false}, {"d1", 1, "first", true}};
  const auto joined = join_labels(ex, labels);
  EXPECT_EQ(joined[0].instruction, "first");
  EXPECT_EQ(joined[1].instruction, "second");
  for (const auto& l : joined) {
    EXPECT_EQ(l.example.dialogue_id, "d1");
    EXPECT_LT(l.example.turn_index, three_turns().turns.size());
  }
  labels.push_back({"d9", 1, "stray", false});
  EXPECT_THROW(join_labels(ex, labels), CorpusError);
  EXPECT_THROW(join_labels(ex, {{"d1", 1, "first", false}}), CorpusError);
}

TEST(RoundTrip, SaveLoadIsIdentity) {
  TempDir dir;
  auto corpus = cidg::testing::make_intent_corpus(12, 5, 0.5);
  corpus.dialogues[0].persona = {"i like ski", "quote \" and unicode caf\xc3\xa9"};
  save_dialogues(dir / "d.jsonl", corpus.dialogues);
  EXPECT_EQ(load_dialogues(dir / "d.jsonl"), corpus.dialogues);

  const auto triplets = cidg::testing::make_triplets(corpus);
  save_triplets(dir / "t.jsonl", triplets);
  EXPECT_EQ(load_triplets(dir / "t.jsonl"), triplets);

  std::vector<LabelRecord> labels = {{"a", 1, "do x", false}, {"b", 3, "respond to the dialogue", true}};
  save_labels(dir / "l.jsonl", labels);
  EXPECT_EQ(load_labels(dir / "l.jsonl"), labels);
}

TEST(LoadLabels, RejectsNegativeTurnAndEmptyInstruction) {
  TempDir dir;
  write(dir / "a.jsonl", R"({"dialogue_id":"a","turn_index":-1,"instruction":"x","fallback":false})" "\n");
  EXPECT_THROW(load_labels(dir / "a.jsonl"), CorpusError);
  write(dir / "b.jsonl", R"({"dialogue_id":"a","turn_index":1,"instruction":" ","fallback":false})" "\n");
  EXPECT_THROW(load_labels(dir / "b.jsonl"), CorpusError);
}
