// Copyright 2026 The jelly-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Model-input sequences for every stage. A ContextLayout is the pure,
// tape-free description of a context (segments, token ids, modality tags,
// loss mask); embed_context() turns it into LM input embeddings, pulling
// emotion rows from a caller-supplied source.

#include <optional>
#include <string>
#include <vector>

#include "jelly/corpus.hpp"
#include "jelly/plora_lm.hpp"

namespace jelly {

enum class AssemblyMode { kStage1Align, kStage2PretrainText, kStage2Finetune, kInferSpeechOnly };

inline std::string_view to_string(AssemblyMode m) {
  switch (m) {
    case AssemblyMode::kStage1Align: return "STAGE1_ALIGN";
    case AssemblyMode::kStage2PretrainText: return "STAGE2_PRETRAIN_TEXT";
    case AssemblyMode::kStage2Finetune: return "STAGE2_FINETUNE";
    case AssemblyMode::kInferSpeechOnly: return "INFER_SPEECH_ONLY";
  }
  return "?";
}

inline constexpr std::string_view kStage1Instruction =
    "describe the emotion and intensity of this speech:";
inline constexpr std::string_view kStage2Instruction =
    "predict the emotion and intensity of the current turn in this dialogue:";

inline std::vector<int> render_instruction(AssemblyMode mode, const Vocabulary& vocab) {
  return vocab.tokenize(mode == AssemblyMode::kStage1Align ? kStage1Instruction
                                                           : kStage2Instruction);
}

// Digits are single tokens, so multi-digit numbers are spelled digit by digit.
inline std::vector<int> render_prefix(int turn, int speaker, const Vocabulary& vocab) {
  auto spell = [](int v) {
    std::string s = std::to_string(v), out;
    for (char ch : s) {
      if (!out.empty()) out.push_back(' ');
      out.push_back(ch);
    }
    return out;
  };
  return vocab.tokenize("turn " + spell(turn) + " speaker " + spell(speaker) + " :");
}

enum class SegmentKind { kInstruction, kPrefix, kEmotion, kTranscript, kAnswer };

inline std::string_view to_string(SegmentKind k) {
  switch (k) {
    case SegmentKind::kInstruction: return "instruction";
    case SegmentKind::kPrefix: return "prefix";
    case SegmentKind::kEmotion: return "emotion";
    case SegmentKind::kTranscript: return "transcript";
    case SegmentKind::kAnswer: return "answer";
  }
  return "?";
}

struct Segment {
  SegmentKind kind;
  int turn = -1;  // utterance index; -1 for instruction and answer
  int begin = 0;
  int length = 0;
  Modality modality = Modality::kText;
  std::vector<int> tokens;  // empty for speech-derived emotion segments
  bool from_speech = false;
};

struct ContextLayout {
  AssemblyMode mode = AssemblyMode::kStage2Finetune;
  std::vector<Segment> segments;
  std::vector<int> tokens;  // per position; kPad at speech-derived rows
  std::vector<Modality> tags;
  Mask loss_mask;
  std::vector<int> target_ids;  // answer rendering; empty when no answer region

  int length() const { return static_cast<int>(tags.size()); }

  int count(SegmentKind k) const {
    int n = 0;
    for (const auto& s : segments) n += s.kind == k;
    return n;
  }
};

struct AssemblyOptions {
  int emotion_rows = 8;  // rows per speech-derived emotion segment
  int max_positions = 512;
  bool with_answer = true;
};

namespace detail {

inline void push_tokens(ContextLayout& c, SegmentKind kind, int turn,
                        const std::vector<int>& ids) {
  Segment s{kind, turn, c.length(), static_cast<int>(ids.size()), Modality::kText, ids, false};
  for (int id : ids) {
    c.tokens.push_back(id);
    c.tags.push_back(Modality::kText);
    c.loss_mask.push_back(kind == SegmentKind::kAnswer ? 1 : 0);
  }
  c.segments.push_back(std::move(s));
}

inline void push_speech(ContextLayout& c, int turn, int rows) {
  c.segments.push_back(Segment{SegmentKind::kEmotion, turn, c.length(), rows, Modality::kEmotion,
                               {}, true});
  for (int r = 0; r < rows; ++r) {
    c.tokens.push_back(Vocabulary::kPad);
    c.tags.push_back(Modality::kEmotion);
    c.loss_mask.push_back(0);
  }
}

inline void finish(ContextLayout& c, std::optional<TurnLabel> target,
                   const AssemblyOptions& opt, const Vocabulary& vocab) {
  if (opt.with_answer) {
    require(target.has_value(), ErrorKind::kShape, "build_context: training mode needs a target");
    c.target_ids = AnswerSchema(vocab).render(target->emotion, target->intensity);
    push_tokens(c, SegmentKind::kAnswer, -1, c.target_ids);
  }
  require(c.length() <= opt.max_positions, ErrorKind::kOverflow,
          "build_context: context of " + std::to_string(c.length()) +
              " positions exceeds max_positions " + std::to_string(opt.max_positions));
}

}  // namespace detail

// Single-utterance alignment context: I + emotion segment + answer.
inline ContextLayout build_utterance_context(const Utterance& u, const Vocabulary& vocab,
                                             const AssemblyOptions& opt) {
  require(u.features.rows() >= 1, ErrorKind::kShape,
          "build_context: utterance " + u.record_id + " has no features for the EQ-former");
  ContextLayout c;
  c.mode = AssemblyMode::kStage1Align;
  detail::push_tokens(c, SegmentKind::kInstruction, -1,
                      render_instruction(AssemblyMode::kStage1Align, vocab));
  detail::push_speech(c, 0, opt.emotion_rows);
  detail::finish(c, TurnLabel{u.emotion, u.intensity}, opt, vocab);
  return c;
}

// I + U_0 .. U_c (+ answer); U_k = P_k + E_k + T_k for k < c, U_c = P_c + T_c.
// STAGE1_ALIGN uses utterance c alone.
inline ContextLayout build_context(const Dialogue& d, int c, AssemblyMode mode,
                                   const Vocabulary& vocab, const AssemblyOptions& opt) {
  require(c >= 2 && c <= d.last_turn(), ErrorKind::kConfig,
          "build_context: current turn c=" + std::to_string(c) + " violates c in [2, N] with N=" +
              std::to_string(d.last_turn()));
  const auto& cur = d.utterances[static_cast<std::size_t>(c)];
  if (mode == AssemblyMode::kStage1Align) return build_utterance_context(cur, vocab, opt);
  const bool infer = mode == AssemblyMode::kInferSpeechOnly;
  require(!(infer && opt.with_answer), ErrorKind::kConfig,
          "build_context: inference contexts carry no answer region");
  ContextLayout ctx;
  ctx.mode = mode;
  detail::push_tokens(ctx, SegmentKind::kInstruction, -1, render_instruction(mode, vocab));
  for (int k = 0; k <= c; ++k) {
    const auto& u = d.utterances[static_cast<std::size_t>(k)];
    detail::push_tokens(ctx, SegmentKind::kPrefix, k, render_prefix(k, u.speaker_id, vocab));
    if (k < c) {
      if (mode == AssemblyMode::kStage2PretrainText) {
        detail::push_tokens(ctx, SegmentKind::kEmotion, k,
                            AnswerSchema(vocab).emotion_label_tokens(u.emotion));
      } else {
        require(u.features.rows() >= 1, ErrorKind::kShape,
                "build_context: utterance " + u.record_id +
                    " has no features for the EQ-former");
        detail::push_speech(ctx, k, opt.emotion_rows);
      }
    }
    detail::push_tokens(ctx, SegmentKind::kTranscript, k, u.transcript_tokens);
  }
  std::optional<TurnLabel> target;
  if (opt.with_answer) target = TurnLabel{cur.emotion, cur.intensity};
  detail::finish(ctx, target, opt, vocab);
  return ctx;
}

// Context without the answer region (for decoding).
inline ContextLayout strip_answer(const ContextLayout& c) {
  ContextLayout out = c;
  if (out.segments.empty() || out.segments.back().kind != SegmentKind::kAnswer) return out;
  const auto n = static_cast<std::size_t>(out.segments.back().begin);
  out.segments.pop_back();
  out.tokens.resize(n);
  out.tags.resize(n);
  out.loss_mask.resize(n);
  out.target_ids.clear();
  return out;
}

// LM input rows for a layout. `speech_rows(turn)` supplies the emotion
// embedding of utterance `turn` (rows x lm_dim) for speech-derived segments.
template <typename T, typename SpeechRows>
ag::Var<T> embed_context(ag::Tape<T>& t, const ContextLayout& c, const PloraLm<T>& lm,
                         SpeechRows&& speech_rows) {
  std::vector<ag::Var<T>> parts;
  std::vector<int> pending;
  auto flush = [&] {
    if (pending.empty()) return;
    parts.push_back(lm.embed_tokens(t, pending));
    pending.clear();
  };
  for (const auto& s : c.segments) {
    if (!s.from_speech) {
      pending.insert(pending.end(), s.tokens.begin(), s.tokens.end());
      continue;
    }
    flush();
    ag::Var<T> rows = speech_rows(s.turn);
    require(rows.rows() == s.length && rows.cols() == lm.dim(), ErrorKind::kShape,
            "embed_context: emotion segment of turn " + std::to_string(s.turn) + " has shape " +
                std::to_string(rows.rows()) + "x" + std::to_string(rows.cols()) + ", expected " +
                std::to_string(s.length) + "x" + std::to_string(lm.dim()));
    parts.push_back(rows);
  }
  flush();
  return parts.size() == 1 ? parts.front() : ag::concat_rows(parts);
}

}  // namespace jelly
