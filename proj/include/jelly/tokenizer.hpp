// Copyright 2026 The jelly-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "jelly/labels.hpp"

namespace jelly {

// Word-level tokenizer over a fixed vocabulary. Punctuation marks are
// separate tokens that detokenize without a leading space, so corpus text
// round-trips exactly.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kBos = 2;
  static constexpr int kEos = 3;

  static constexpr std::string_view kCueWord = "really";

  Vocabulary() {
    for (std::string_view w : kWords) add(std::string(w));
  }

  int size() const { return static_cast<int>(words_.size()); }

  int id(std::string_view word) const {
    auto it = ids_.find(std::string(word));
    return it == ids_.end() ? kUnk : it->second;
  }

  bool contains(std::string_view word) const {
    return ids_.contains(std::string(word));
  }

  const std::string& word(int id) const {
    require(id >= 0 && id < size(), ErrorKind::kDomain,
            "token id " + std::to_string(id) + " out of range");
    return words_[static_cast<std::size_t>(id)];
  }

  std::vector<int> tokenize(std::string_view text) const {
    std::vector<int> out;
    std::istringstream in{std::string(text)};
    std::string w;
    while (in >> w) {
      std::vector<std::string> trailing;
      while (w.size() > 1 && is_punct(w.back())) {
        trailing.emplace_back(1, w.back());
        w.pop_back();
      }
      out.push_back(id(w));
      for (auto it = trailing.rbegin(); it != trailing.rend(); ++it) {
        out.push_back(id(*it));
      }
    }
    return out;
  }

  std::string detokenize(const std::vector<int>& ids) const {
    std::string out;
    for (int id : ids) {
      const std::string& w = word(id);
      if (!out.empty() && !(w.size() == 1 && is_punct(w[0]))) out.push_back(' ');
      out += w;
    }
    return out;
  }

  int cue_id() const { return id(kCueWord); }
  int emotion_id(Emotion e) const { return id(to_string(e)); }
  int intensity_id(Intensity i) const { return id(to_string(i)); }

  // Words usable in transcripts (excludes specials, labels, template words
  // and the cue word).
  static const std::vector<std::string_view>& transcript_words() {
    static const std::vector<std::string_view> kT = {
        "i",     "you",   "we",    "they",   "it",     "that",   "think",  "know",
        "want",  "need",  "saw",   "heard",  "said",   "went",   "got",    "made",
        "left",  "found", "lost",  "like",   "have",   "had",    "will",   "can",
        "today", "now",   "again", "there",  "here",   "home",   "work",   "school",
        "money", "news",  "movie", "dinner", "party",  "letter", "car",    "phone",
        "dog",   "game",  "plan",  "trip",   "gift",   "story",  "friend", "boss",
        "a",     "my",    "your",  "our",    "new",    "old",    "big",    "so",
        "very",  "late",  "early", "all",    "not",    "just"};
    return kT;
  }

  std::vector<std::string> words() const { return words_; }

 private:
  static bool is_punct(char c) { return c == ':' || c == '.' || c == '?' || c == ','; }

  static constexpr std::string_view kWords[] = {
      // specials
      "<pad>", "<unk>", "<bos>", "<eos>",
      // punctuation
      ":", ".", "?", ",",
      // template words
      "emotion", "intensity", "turn", "speaker", "describe", "predict", "the",
      "and", "of", "this", "speech", "current", "in", "dialogue",
      // digits
      "0", "1", "2", "3", "4", "5", "6", "7", "8", "9",
      // labels
      "happy", "sad", "surprise", "angry", "fear", "disgust", "neutral", "weak",
      "medium", "strong",
      // cue
      "really",
      // transcript words
      "i", "you", "we", "they", "it", "that", "think", "know", "want", "need", "saw",
      "heard", "said", "went", "got", "made", "left", "found", "lost", "like", "have",
      "had", "will", "can", "today", "now", "again", "there", "here", "home", "work",
      "school", "money", "news", "movie", "dinner", "party", "letter", "car", "phone",
      "dog", "game", "plan", "trip", "gift", "story", "friend", "boss", "a", "my",
      "your", "our", "new", "old", "big", "so", "very", "late", "early", "all", "not",
      "just"};

  void add(std::string w) {
    ids_[w] = static_cast<int>(words_.size());
    words_.push_back(std::move(w));
  }

  std::vector<std::string> words_;
  std::map<std::string, int> ids_;
};

// Fixed answer protocol: "emotion: <label> intensity: <label>" + <eos>.
class AnswerSchema {
 public:
  explicit AnswerSchema(const Vocabulary& vocab) : vocab_(&vocab) {}

  static constexpr int kMaxAnswerTokens = 12;

  static std::string render_text(Emotion e, Intensity i) {
    return "emotion: " + std::string(to_string(e)) + " intensity: " +
           std::string(to_string(i));
  }

  // Token ids of the answer including the terminator.
  std::vector<int> render(Emotion e, Intensity i) const {
    auto ids = vocab_->tokenize(render_text(e, i));
    ids.push_back(Vocabulary::kEos);
    return ids;
  }

  struct Parsed {
    Emotion emotion;
    Intensity intensity;
  };

  // Accepts exactly the rendered form; the terminator is required.
  std::optional<Parsed> parse(const std::vector<int>& ids) const {
    const auto& v = *vocab_;
    if (ids.size() != 7) return std::nullopt;
    if (ids[0] != v.id("emotion") || ids[1] != v.id(":") ||
        ids[3] != v.id("intensity") || ids[4] != v.id(":") ||
        ids[6] != Vocabulary::kEos) {
      return std::nullopt;
    }
    auto e = try_parse_emotion(v.word(ids[2]));
    auto i = try_parse_intensity(v.word(ids[5]));
    if (!e || !i) return std::nullopt;
    return Parsed{*e, *i};
  }

  std::vector<int> emotion_label_tokens(Emotion e) const {
    return vocab_->tokenize(to_string(e));
  }
  std::vector<int> intensity_label_tokens(Intensity i) const {
    return vocab_->tokenize(to_string(i));
  }

 private:
  const Vocabulary* vocab_;
};

}  // namespace jelly
