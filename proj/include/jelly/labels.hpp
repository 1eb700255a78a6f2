// Copyright 2026 The jelly-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

#include "jelly/error.hpp"

namespace jelly {

enum class Emotion { kHappy, kSad, kSurprise, kAngry, kFear, kDisgust, kNeutral };
enum class Intensity { kWeak, kMedium, kStrong };

inline constexpr int kNumEmotions = 7;
inline constexpr int kNumIntensities = 3;

inline constexpr std::array<std::string_view, kNumEmotions> kEmotionNames = {
    "happy", "sad", "surprise", "angry", "fear", "disgust", "neutral"};
inline constexpr std::array<std::string_view, kNumIntensities> kIntensityNames = {
    "weak", "medium", "strong"};

inline constexpr std::array<Emotion, kNumEmotions> kAllEmotions = {
    Emotion::kHappy, Emotion::kSad,     Emotion::kSurprise, Emotion::kAngry,
    Emotion::kFear,  Emotion::kDisgust, Emotion::kNeutral};
inline constexpr std::array<Intensity, kNumIntensities> kAllIntensities = {
    Intensity::kWeak, Intensity::kMedium, Intensity::kStrong};

inline constexpr int index_of(Emotion e) { return static_cast<int>(e); }
inline constexpr int index_of(Intensity i) { return static_cast<int>(i); }

inline std::string_view to_string(Emotion e) { return kEmotionNames[index_of(e)]; }
inline std::string_view to_string(Intensity i) { return kIntensityNames[index_of(i)]; }

inline std::optional<Emotion> try_parse_emotion(std::string_view s) {
  for (int i = 0; i < kNumEmotions; ++i) {
    if (kEmotionNames[i] == s) return static_cast<Emotion>(i);
  }
  return std::nullopt;
}

inline std::optional<Intensity> try_parse_intensity(std::string_view s) {
  for (int i = 0; i < kNumIntensities; ++i) {
    if (kIntensityNames[i] == s) return static_cast<Intensity>(i);
  }
  return std::nullopt;
}

inline Emotion parse_emotion(std::string_view s) {
  auto e = try_parse_emotion(s);
  if (!e) fail(ErrorKind::kDomain, "unknown emotion '" + std::string(s) + "'");
  return *e;
}

inline Intensity parse_intensity(std::string_view s) {
  auto i = try_parse_intensity(s);
  if (!i) fail(ErrorKind::kDomain, "unknown intensity '" + std::string(s) + "'");
  return *i;
}

inline Emotion emotion_from_index(int i) {
  require(i >= 0 && i < kNumEmotions, ErrorKind::kDomain,
          "emotion id " + std::to_string(i) + " out of range");
  return static_cast<Emotion>(i);
}

inline Intensity intensity_from_index(int i) {
  require(i >= 0 && i < kNumIntensities, ErrorKind::kDomain,
          "intensity id " + std::to_string(i) + " out of range");
  return static_cast<Intensity>(i);
}

}  // namespace jelly
