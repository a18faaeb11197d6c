#include <algorithm>

#include <gtest/gtest.h>

#include "cidg/taskformat.hpp"
#include "support/synthetic.hpp"

using namespace cidg;

namespace {

DialogueExample example(std::vector<std::string> persona, std::vector<std::string> turns, std::string response) {
  DialogueExample ex;
  ex.dialogue_id = "d";
  ex.persona = std::move(persona);
  for (std::size_t i = 0; i < turns.size(); ++i) ex.turns.push_back({i % 2 ? Speaker::B : Speaker::A, turns[i]});
  ex.turn_index = ex.turns.size();
  ex.response = std::move(response);
  return ex;
}

Vocabulary vocab_for(std::vector<std::string> texts) { return build_vocab(texts, 1, 1000); }

bool is_subsequence(const std::vector<TokenId>& small, const std::vector<TokenId>& big) {
  std::size_t j = 0;
  for (TokenId t : big)
    if (j < small.size() && small[j] == t) ++j;
  return j == small.size();
}

}  // namespace

TEST(SerializeContext, Layouts) {
  EXPECT_EQ(serialize_context(example({}, {"hi"}, "x")), "[CTX] [SPKA] hi");
  EXPECT_EQ(serialize_context(example({"i ski"}, {"hi", "yo"}, "x")), "[PER] i ski [CTX] [SPKA] hi [SPKB] yo");
  EXPECT_EQ(serialize_context(example({"p", "q"}, {"x"}, "y")), "[PER] p [SEP] q [CTX] [SPKA] x");
}

TEST(FormatCase, CaseFourAndThreeExamples) {
  const auto v = vocab_for({"hi yo do it"});
  const auto ex = example({}, {"hi"}, "yo");
  const SeqPair c4 = format_case(ex, "", TaskCase::RespFromContext, v, 64);
  EXPECT_EQ(c4.source, (std::vector<TokenId>{tok::kGenResp, tok::kCtx, tok::kSpkA, v.id("hi")}));
  EXPECT_EQ(c4.target, (std::vector<TokenId>{v.id("yo"), tok::kEos}));
  EXPECT_EQ(c4.kind, PairKind::Case4);

  const SeqPair c3 = format_case(ex, "do it", TaskCase::InstrFromContext, v, 64);
  EXPECT_EQ(c3.source, (std::vector<TokenId>{tok::kGenInst, tok::kCtx, tok::kSpkA, v.id("hi")}));
  EXPECT_EQ(c3.target, (std::vector<TokenId>{v.id("do"), v.id("it"), tok::kEos}));
}

TEST(FormatCase, CaseOneAndTwoLayouts) {
  const auto v = vocab_for({"hi yo do it"});
  const auto ex = example({}, {"hi"}, "yo");
  const SeqPair c1 = format_case(ex, "do it", TaskCase::InstrFromContextAndResponse, v, 64);
  EXPECT_EQ(c1.source,
            (std::vector<TokenId>{tok::kGenInst, tok::kCtx, tok::kSpkA, v.id("hi"), tok::kRsp, v.id("yo")}));
  EXPECT_EQ(c1.target, (std::vector<TokenId>{v.id("do"), v.id("it"), tok::kEos}));
  const SeqPair c2 = format_case(ex, "do it", TaskCase::RespFromInstructionAndContext, v, 64);
  EXPECT_EQ(c2.source, (std::vector<TokenId>{tok::kGenResp, tok::kIns, v.id("do"), v.id("it"), tok::kCtx,
                                             tok::kSpkA, v.id("hi")}));
  EXPECT_EQ(c2.target, (std::vector<TokenId>{v.id("yo"), tok::kEos}));
}

TEST(FormatCase, IrreducibleOverflow) {
  const auto v = vocab_for({"a b c d e f g h i j hi yo"});
  const auto ex = example({}, {"hi"}, "yo");
  EXPECT_THROW(format_case(ex, "a b c d e f g h i j", TaskCase::RespFromInstructionAndContext, v, 4), FormatError);
}

TEST(FormatCase, DropsOldestTurnsFirst) {
  const auto v = vocab_for({"one two three four five six seven eight"});
  const auto ex = example({}, {"one two", "three four", "five six"}, "seven");
  // Full source: <gen_resp> [CTX] + 3 turns of 3 tokens = 11.
  const SeqPair full = format_case(ex, "", TaskCase::RespFromContext, v, 11);
  EXPECT_EQ(full.source.size(), 11u);
  const SeqPair cut = format_case(ex, "", TaskCase::RespFromContext, v, 10);
  EXPECT_EQ(cut.source, (std::vector<TokenId>{tok::kGenResp, tok::kCtx, tok::kSpkB, v.id("three"), v.id("four"),
                                              tok::kSpkA, v.id("five"), v.id("six")}));
  // Down to the newest turn, then its leading words.
  const SeqPair tight = format_case(ex, "", TaskCase::RespFromContext, v, 4);
  EXPECT_EQ(tight.source, (std::vector<TokenId>{tok::kGenResp, tok::kCtx, tok::kSpkA, v.id("six")}));
  EXPECT_THROW(format_case(ex, "", TaskCase::RespFromContext, v, 3), FormatError);
}

TEST(FormatCase, PersonaInstructionAndResponseAreNeverCut) {
  const auto v = vocab_for({"p q a b c d e f x y"});
  const auto ex = example({"p q"}, {"a b", "c d", "e f"}, "x y");
  const SeqPair c1 = format_case(ex, "x", TaskCase::InstrFromContextAndResponse, v, 11);
  // <gen_inst> [PER] p q [CTX] [SPKA] e f [RSP] x y
  EXPECT_EQ(c1.source, (std::vector<TokenId>{tok::kGenInst, tok::kPer, v.id("p"), v.id("q"), tok::kCtx, tok::kSpkA,
                                             v.id("e"), v.id("f"), tok::kRsp, v.id("x"), v.id("y")}));
}

TEST(FormatCase, InvariantsAndMonotonicity) {
  auto ex = example({"i like to ski", "my dog is old"},
                    {"so what about the weather today", "it rained a lot", "did you stay inside then",
                     "yes all day long"},
                    "that sounds cozy");
  const auto v = vocab_for({"i like to ski my dog is old so what about the weather today it rained a lot",
                            "did you stay inside then yes all day long that sounds cozy talk about rain"});
  for (TaskCase c : kAllCases) {
    std::vector<TokenId> previous;
    for (std::size_t budget = 16; budget <= 48; ++budget) {
      SeqPair p;
      try {
        p = format_case(ex, "talk about rain", c, v, budget);
      } catch (const FormatError&) {
        EXPECT_TRUE(previous.empty()) << "overflow after a smaller budget fit";
        continue;
      }
      EXPECT_LE(p.source.size(), budget);
      EXPECT_TRUE(p.source[0] == tok::kGenInst || p.source[0] == tok::kGenResp);
      EXPECT_EQ(p.target.back(), tok::kEos);
      EXPECT_EQ(std::count(p.target.begin(), p.target.end(), tok::kPad), 0);
      if (!previous.empty()) {
        EXPECT_TRUE(is_subsequence(previous, p.source)) << "budget " << budget;
      }
      previous = p.source;
    }
  }
}

TEST(FormatCase, CasesThreeAndFourDifferOnlyInSentinel) {
  const auto corpus = cidg::testing::make_intent_corpus(20, 11, 0.5);
  const auto examples = expand_examples(corpus.dialogues);
  std::vector<std::string> texts;
  for (const auto& d : corpus.dialogues) texts.push_back(d.turns[0].text + " " + d.turns[1].text);
  const auto v = build_vocab(texts, 1, 1000);
  for (std::size_t i = 0; i < examples.size(); ++i) {
    for (std::size_t budget : {8u, 12u, 64u}) {
      auto a = format_case(examples[i], corpus.instructions[i], TaskCase::InstrFromContext, v, budget).source;
      auto b = format_case(examples[i], corpus.instructions[i], TaskCase::RespFromContext, v, budget).source;
      ASSERT_EQ(a.size(), b.size());
      EXPECT_EQ(a[0], tok::kGenInst);
      EXPECT_EQ(b[0], tok::kGenResp);
      EXPECT_TRUE(std::equal(a.begin() + 1, a.end(), b.begin() + 1));
    }
  }
}

TEST(FormatInstgen, Examples) {
  const auto v = vocab_for({"a b do c"});
  const SeqPair p = format_instgen("a", "b", std::string("do c"), v, 64);
  EXPECT_EQ(p.source, (std::vector<TokenId>{tok::kMask0, tok::kCtx, v.id("a"), tok::kRsp, v.id("b")}));
  EXPECT_EQ(p.target, (std::vector<TokenId>{tok::kMask0, v.id("do"), v.id("c"), tok::kEos}));
  EXPECT_EQ(p.kind, PairKind::InstGen);

  const SeqPair empty_x = format_instgen("", "b", std::string("c"), v, 64);
  EXPECT_EQ(empty_x.source, (std::vector<TokenId>{tok::kMask0, tok::kCtx, tok::kRsp, v.id("b")}));

  const SeqPair query = format_instgen("a", "b", std::nullopt, v, 64);
  EXPECT_TRUE(query.target.empty());
  EXPECT_EQ(query.kind, PairKind::InstGenQuery);
}

TEST(FormatInstgen, TruncatesInputFromTheLeftAndRejectsLongOutput) {
  const auto v = vocab_for({"a b c d y z"});
  const SeqPair p = format_instgen("a b c d", "y z", std::nullopt, v, 7);
  EXPECT_EQ(p.source, (std::vector<TokenId>{tok::kMask0, tok::kCtx, v.id("c"), v.id("d"), tok::kRsp, v.id("y"),
                                            v.id("z")}));
  EXPECT_THROW(format_instgen("a", "y z", std::nullopt, v, 4), FormatError);
  EXPECT_THROW(format_instgen("a", "", std::nullopt, v, 64), FormatError);
}

TEST(FormatInstgen, MarkupInInputMapsToMarkers) {
  const auto v = vocab_for({"hi yo"});
  const SeqPair p = format_instgen("[CTX] [SPKA] hi", "yo", std::nullopt, v, 64);
  EXPECT_EQ(p.source,
            (std::vector<TokenId>{tok::kMask0, tok::kCtx, tok::kCtx, tok::kSpkA, v.id("hi"), tok::kRsp, v.id("yo")}));
}

TEST(SampleCase, ResponseOnlyAlwaysCaseFour) {
  Rng rng(7);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(sample_case(rng, TrainingMode::ResponseOnly), TaskCase::RespFromContext);
}

TEST(SampleCase, SeedFortyTwoSequenceIsFrozen) {
  // From an independent MT19937-64 implementation: 1 + (draw % 4).
  const std::vector<int> expected = {3, 1, 3, 3, 2, 1, 1, 1, 3, 2, 4, 3};
  Rng rng(42);
  for (int e : expected) EXPECT_EQ(static_cast<int>(sample_case(rng, TrainingMode::Full)), e);
}

TEST(SampleCase, RoughlyUniform) {
  Rng rng(42);
  std::array<int, 5> counts{};
  for (int i = 0; i < 4000; ++i) ++counts[static_cast<int>(sample_case(rng, TrainingMode::Full))];
  for (int c = 1; c <= 4; ++c) {
    EXPECT_GE(counts[c], 900);
    EXPECT_LE(counts[c], 1100);
  }
}
