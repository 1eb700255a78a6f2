// Copyright 2026 The jelly-lab Authors
// SPDX-License-Identifier: Apache-2.0
#include <set>

#include <gtest/gtest.h>

#include "jelly/assembly.hpp"

namespace jelly {
namespace {

using M = AssemblyMode;

Dialogue three_turns() {
  Vocabulary v;
  Dialogue d;
  d.dialogue_id = "d0";
  d.current_turn = 2;
  const std::vector<std::string> text = {"i saw the dog .", "you went home ?",
                                         "that is so late ."};
  const Emotion emos[] = {Emotion::kHappy, Emotion::kSad, Emotion::kDisgust};
  for (int k = 0; k < 3; ++k) {
    Utterance u;
    u.record_id = "d0_u" + std::to_string(k);
    u.speaker_id = k % 2 == 0 ? 1 : 3;
    u.transcript_tokens = v.tokenize(text[k]);
    u.emotion = emos[k];
    u.intensity = Intensity::kMedium;
    u.features = MatF::Ones(6, 24);
    d.utterances.push_back(u);
  }
  return d;
}

AssemblyOptions opts(bool answer = true) {
  AssemblyOptions o;
  o.emotion_rows = 8;
  o.with_answer = answer;
  return o;
}

void expect_tiling(const ContextLayout& c) {
  int pos = 0;
  for (const auto& s : c.segments) {
    EXPECT_EQ(s.begin, pos);
    pos += s.length;
  }
  EXPECT_EQ(pos, c.length());
  EXPECT_EQ(c.tokens.size(), c.tags.size());
  EXPECT_EQ(c.loss_mask.size(), c.tags.size());
}

std::vector<SegmentKind> kinds(const ContextLayout& c) {
  std::vector<SegmentKind> out;
  for (const auto& s : c.segments) out.push_back(s.kind);
  return out;
}

TEST(Instruction, FixedTemplates) {
  Vocabulary v;
  for (auto m : {M::kStage1Align, M::kStage2PretrainText, M::kStage2Finetune,
                 M::kInferSpeechOnly}) {
    EXPECT_EQ(render_instruction(m, v), render_instruction(m, v));
    EXPECT_LE(render_instruction(m, v).size(), 48u);
    for (int id : render_instruction(m, v)) EXPECT_NE(id, Vocabulary::kUnk);
  }
  EXPECT_NE(render_instruction(M::kStage1Align, v), render_instruction(M::kStage2Finetune, v));
}

TEST(Prefix, InjectiveOverTurnAndSpeaker) {
  Vocabulary v;
  std::set<std::vector<int>> seen;
  int n = 0;
  for (int k = 0; k < 10; ++k) {
    for (int s = 0; s < 16; ++s) {
      seen.insert(render_prefix(k, s, v));
      ++n;
    }
  }
  EXPECT_EQ(seen.size(), static_cast<std::size_t>(n));
  EXPECT_EQ(v.detokenize(render_prefix(3, 12, v)), "turn 3 speaker 1 2:");
}

TEST(Context, Stage2StructureAndSpans) {
  Vocabulary v;
  const auto c = build_context(three_turns(), 2, M::kStage2Finetune, v, opts());
  using K = SegmentKind;
  EXPECT_EQ(kinds(c), (std::vector<K>{K::kInstruction, K::kPrefix, K::kEmotion, K::kTranscript,
                                      K::kPrefix, K::kEmotion, K::kTranscript, K::kPrefix,
                                      K::kTranscript, K::kAnswer}));
  EXPECT_EQ(c.count(K::kEmotion), 2);
  for (const auto& s : c.segments) {
    if (s.kind == K::kEmotion) {
      EXPECT_EQ(s.length, 8);
      EXPECT_TRUE(s.from_speech);
      EXPECT_LT(s.turn, 2);
    }
  }
  for (int p = 0; p < c.length(); ++p) {
    const bool in_emotion = std::any_of(c.segments.begin(), c.segments.end(), [&](const auto& s) {
      return s.kind == K::kEmotion && p >= s.begin && p < s.begin + s.length;
    });
    EXPECT_EQ(c.tags[p] == Modality::kEmotion, in_emotion);
    if (c.tags[p] == Modality::kEmotion) {
      EXPECT_EQ(c.loss_mask[p], 0);
    }
  }
  const int loss = static_cast<int>(std::count(c.loss_mask.begin(), c.loss_mask.end(), 1));
  EXPECT_EQ(loss, static_cast<int>(c.target_ids.size()));
  EXPECT_EQ(c.segments.back().begin + c.segments.back().length, c.length());
  expect_tiling(c);
}

TEST(Context, PretrainUsesLabelTokensAsText) {
  Vocabulary v;
  const auto c = build_context(three_turns(), 2, M::kStage2PretrainText, v, opts());
  const auto& e0 = c.segments[2];
  ASSERT_EQ(e0.kind, SegmentKind::kEmotion);
  EXPECT_EQ(e0.tokens, v.tokenize("happy"));
  EXPECT_EQ(e0.modality, Modality::kText);
  EXPECT_FALSE(e0.from_speech);
  for (auto m : c.tags) EXPECT_EQ(m, Modality::kText);
  expect_tiling(c);
}

TEST(Context, PretrainAndFinetuneAgreeOutsideEmotionSpans) {
  Vocabulary v;
  const auto a = build_context(three_turns(), 2, M::kStage2PretrainText, v, opts());
  const auto b = build_context(three_turns(), 2, M::kStage2Finetune, v, opts());
  ASSERT_EQ(a.segments.size(), b.segments.size());
  for (std::size_t i = 0; i < a.segments.size(); ++i) {
    EXPECT_EQ(a.segments[i].kind, b.segments[i].kind);
    if (a.segments[i].kind != SegmentKind::kEmotion) {
      EXPECT_EQ(a.segments[i].tokens, b.segments[i].tokens);
    }
  }
}

TEST(Context, Stage1IsSingleUtterance) {
  Vocabulary v;
  const auto c = build_context(three_turns(), 2, M::kStage1Align, v, opts());
  using K = SegmentKind;
  EXPECT_EQ(kinds(c), (std::vector<K>{K::kInstruction, K::kEmotion, K::kAnswer}));
  EXPECT_EQ(c.target_ids, AnswerSchema(v).render(Emotion::kDisgust, Intensity::kMedium));
  EXPECT_EQ(c.count(K::kTranscript), 0);
  expect_tiling(c);
}

TEST(Context, CurrentTurnLabelsOnlyInTargets) {
  Vocabulary v;
  Dialogue d = three_turns();
  const auto a = build_context(d, 2, M::kStage2Finetune, v, opts());
  d.utterances[2].emotion = Emotion::kAngry;
  d.utterances[2].intensity = Intensity::kStrong;
  const auto b = build_context(d, 2, M::kStage2Finetune, v, opts());
  const auto na = static_cast<std::size_t>(a.segments.back().begin);
  EXPECT_EQ(std::vector<int>(a.tokens.begin(), a.tokens.begin() + na),
            std::vector<int>(b.tokens.begin(), b.tokens.begin() + na));
  EXPECT_NE(a.target_ids, b.target_ids);
  const auto ia = build_context(d, 2, M::kInferSpeechOnly, v, opts(false));
  EXPECT_TRUE(ia.target_ids.empty());
  EXPECT_EQ(ia.count(SegmentKind::kAnswer), 0);
  EXPECT_EQ(std::count(ia.loss_mask.begin(), ia.loss_mask.end(), 1), 0);
  const auto stripped = strip_answer(a);
  EXPECT_EQ(stripped.tokens, ia.tokens);
  EXPECT_EQ(stripped.tags, ia.tags);
}

TEST(Context, Errors) {
  Vocabulary v;
  Dialogue d = three_turns();
  auto kind = [](const std::function<void()>& f) {
    try {
      f();
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::kDivergence;
  };
  EXPECT_EQ(kind([&] { build_context(d, 1, M::kStage2Finetune, v, opts()); }),
            ErrorKind::kConfig);
  auto small = opts();
  small.max_positions = 20;
  try {
    build_context(d, 2, M::kStage2Finetune, v, small);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kOverflow);
    const auto full = build_context(d, 2, M::kStage2Finetune, v, opts());
    EXPECT_NE(std::string(e.what()).find(std::to_string(full.length())), std::string::npos);
  }
  EXPECT_EQ(kind([&] { build_context(d, 2, M::kInferSpeechOnly, v, opts(true)); }),
            ErrorKind::kConfig);
  d.utterances[1].features.resize(0, 24);
  EXPECT_EQ(kind([&] { build_context(d, 2, M::kStage2Finetune, v, opts()); }),
            ErrorKind::kShape);
  EXPECT_NO_THROW(build_context(d, 2, M::kStage2PretrainText, v, opts()));
}

TEST(Embed, SpeechRowsLandInTheirSpans) {
  Vocabulary v;
  ParamStore<double> store;
  LmConfig lc;
  lc.dim = 16;
  lc.heads = 2;
  lc.blocks = 1;
  PloraLm<double> lm(store, lc, 1);
  const auto c = build_context(three_turns(), 2, M::kStage2Finetune, v, opts());
  ag::Tape<double> t(false);
  auto rows = [&](int turn) { return t.constant(MatD::Constant(8, 16, 100.0 + turn)); };
  const MatD e = embed_context(t, c, lm, rows).value();
  ASSERT_EQ(e.rows(), c.length());
  const MatD& table = store.at("lm.tok_emb").value;
  for (const auto& s : c.segments) {
    for (int r = 0; r < s.length; ++r) {
      if (s.from_speech) {
        EXPECT_EQ(e(s.begin + r, 0), 100.0 + s.turn);
      } else {
        EXPECT_EQ(e.row(s.begin + r), table.row(s.tokens[r]));
      }
    }
  }
  auto bad = [&](int) { return t.constant(MatD::Zero(7, 16)); };
  EXPECT_THROW(embed_context(t, c, lm, bad), Error);
}

}  // namespace
}  // namespace jelly
