// Copyright 2026 The jelly-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Synthetic emotional-dialogue corpus.
//
// Each utterance's (emotion, intensity) lives in its feature frames: the six
// non-neutral emotions own disjoint channel groups, neutral is the all-zero
// pattern and intensity scales the pattern by 0.5 / 1.0 / 1.5. Transcripts
// are random template sentences that carry no emotion information. Every
// turn k >= 2 is labelled by context_rule() applied to its history, so the
// current turn's emotion can only be inferred by combining the previous
// speaker's (audible) emotion with the current transcript.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "jelly/io.hpp"
#include "jelly/labels.hpp"
#include "jelly/tensor.hpp"
#include "jelly/tokenizer.hpp"

namespace jelly {

inline constexpr int kCorpusSchemaVersion = 1;

struct Utterance {
  std::string record_id;
  int speaker_id = 0;
  std::vector<int> transcript_tokens;
  Emotion emotion = Emotion::kNeutral;
  Intensity intensity = Intensity::kMedium;
  MatF features;  // frames x feature_dim; empty for text-only dialogues

  int duration_frames() const { return static_cast<int>(features.rows()); }
};

struct Dialogue {
  std::string dialogue_id;
  std::vector<Utterance> utterances;
  int current_turn = 2;

  // Highest turn index N.
  int last_turn() const { return static_cast<int>(utterances.size()) - 1; }
};

struct CorpusSpec {
  int num_dialogues = 2000;
  int min_utterances = 3;  // N + 1, N >= 2
  int max_utterances = 4;
  int feature_dim = 24;
  int min_frames = 16;
  int max_frames = 24;
  int vocab_size = 0;  // 0: whatever the built-in vocabulary holds
  double train_ratio = 0.8;
  double val_ratio = 0.1;
  double test_ratio = 0.1;
  std::uint64_t seed = 7;
  double noise_scale = 0.05;
  // Fraction of the pattern amplitude carried by a zero-mean oscillation
  // (0: constant pattern, 1: pure oscillation with random phase).
  double oscillation = 0.0;
  double cue_rate = 0.5;
  int num_speakers = 4;
  // Fraction of dialogues generated as transcript-identical twins of their
  // predecessor with a different current-turn target.
  double twin_rate = 0.1;
};

struct Corpus {
  CorpusSpec spec;
  std::vector<Dialogue> train;
  std::vector<Dialogue> val;
  std::vector<Dialogue> test;
};

inline constexpr double intensity_gain(Intensity i) {
  switch (i) {
    case Intensity::kWeak: return 0.5;
    case Intensity::kMedium: return 1.0;
    case Intensity::kStrong: return 1.5;
  }
  return 1.0;
}

// Channels owned by each non-neutral emotion.
inline int pattern_group_width(int feature_dim) { return (feature_dim - 2) / 6; }

// Channel range [begin, end) of `e`; empty for neutral.
inline std::pair<int, int> pattern_channels(Emotion e, int feature_dim) {
  if (e == Emotion::kNeutral) return {0, 0};
  const int g = pattern_group_width(feature_dim);
  const int k = index_of(e);
  return {k * g, (k + 1) * g};
}

inline int carrier_begin(int feature_dim) { return 6 * pattern_group_width(feature_dim); }

struct SignatureParams {
  double noise_scale = 0.05;
  double oscillation = 0.0;
};

// Noise-free part of emotion_signature(): carrier + gain * pattern * modulation.
inline MatF signature_noiseless(Emotion e, Intensity i, int frames, int feature_dim,
                                std::uint64_t seed, double oscillation) {
  require(frames >= 4, ErrorKind::kShape, "emotion_signature: need at least 4 frames");
  require(feature_dim >= 8, ErrorKind::kShape, "emotion_signature: feature_dim must be >= 8");
  require(index_of(e) >= 0 && index_of(e) < kNumEmotions, ErrorKind::kDomain,
          "emotion_signature: unknown emotion category");
  require(index_of(i) >= 0 && index_of(i) < kNumIntensities, ErrorKind::kDomain,
          "emotion_signature: unknown intensity category");
  Rng rng(derive_seed(seed, "phase"));
  std::uniform_real_distribution<double> uphase(0.0, 2.0 * std::numbers::pi);
  const double phase = uphase(rng);
  MatF x = MatF::Zero(frames, feature_dim);
  const int cb = carrier_begin(feature_dim);
  for (int t = 0; t < frames; ++t) {
    for (int c = cb; c < feature_dim; ++c) {
      x(t, c) = static_cast<float>(0.5 * std::cos(2.0 * std::numbers::pi * t / 10.0 + c));
    }
  }
  const auto [b, en] = pattern_channels(e, feature_dim);
  const double gain = intensity_gain(i);
  for (int t = 0; t < frames; ++t) {
    const double osc = std::sqrt(2.0) * std::sin(2.0 * std::numbers::pi * t / 6.0 + phase);
    const double mod = (1.0 - oscillation) + oscillation * osc;
    for (int c = b; c < en; ++c) x(t, c) = static_cast<float>(gain * mod);
  }
  return x;
}

// Synthetic speech-feature frames for one utterance.
inline MatF emotion_signature(Emotion e, Intensity i, int frames, int feature_dim,
                              std::uint64_t seed, const SignatureParams& p = {}) {
  MatF x = signature_noiseless(e, i, frames, feature_dim, seed, p.oscillation);
  if (p.noise_scale > 0) {
    Rng rng(derive_seed(seed, "noise"));
    std::normal_distribution<double> n(0.0, p.noise_scale);
    for (Eigen::Index k = 0; k < x.size(); ++k) x.data()[k] += static_cast<float>(n(rng));
  }
  return x;
}

// Emotions come in response pairs (happy/surprise, sad/disgust, angry/fear);
// neutral stands alone. Cue absent: the partner of the other speaker's
// emotion. Cue present: the first member of its pair.
inline Emotion response_emotion(Emotion last_other, bool cue_present) {
  switch (last_other) {
    case Emotion::kHappy: return cue_present ? Emotion::kHappy : Emotion::kSurprise;
    case Emotion::kSurprise: return Emotion::kHappy;
    case Emotion::kSad: return cue_present ? Emotion::kSad : Emotion::kDisgust;
    case Emotion::kDisgust: return Emotion::kSad;
    case Emotion::kAngry: return cue_present ? Emotion::kAngry : Emotion::kFear;
    case Emotion::kFear: return Emotion::kAngry;
    case Emotion::kNeutral: return Emotion::kNeutral;
  }
  return Emotion::kNeutral;
}

// Sum of the last two intensity levels (weak=0, medium=1, strong=2):
// 0-1 -> weak, 2 -> medium, 3-4 -> strong.
inline Intensity response_intensity(Intensity last, Intensity before_last) {
  const int s = index_of(last) + index_of(before_last);
  if (s <= 1) return Intensity::kWeak;
  if (s == 2) return Intensity::kMedium;
  return Intensity::kStrong;
}

struct TurnLabel {
  Emotion emotion;
  Intensity intensity;
  bool operator==(const TurnLabel&) const = default;
};

// Ground truth for the current turn given the history (speakers alternate,
// so the last history entry is the other speaker's latest turn).
inline TurnLabel context_rule(const std::vector<Emotion>& history_emotions,
                              const std::vector<Intensity>& history_intensities,
                              const std::vector<int>& current_transcript_tokens,
                              const Vocabulary& vocab) {
  require(history_emotions.size() >= 2 &&
              history_emotions.size() == history_intensities.size(),
          ErrorKind::kShape, "context_rule: need at least two history turns");
  const int cue = vocab.cue_id();
  const bool cue_present =
      std::find(current_transcript_tokens.begin(), current_transcript_tokens.end(), cue) !=
      current_transcript_tokens.end();
  const auto n = history_emotions.size();
  return {response_emotion(history_emotions[n - 1], cue_present),
          response_intensity(history_intensities[n - 1], history_intensities[n - 2])};
}

inline std::vector<int> random_transcript(Rng& rng, double cue_rate, const Vocabulary& vocab) {
  const auto& words = Vocabulary::transcript_words();
  std::uniform_int_distribution<int> len_dist(3, 5);
  std::uniform_int_distribution<std::size_t> word_dist(0, words.size() - 1);
  std::bernoulli_distribution cue_dist(cue_rate);
  std::bernoulli_distribution question(0.3);
  std::vector<int> ids;
  const int len = len_dist(rng);
  for (int i = 0; i < len; ++i) ids.push_back(vocab.id(words[word_dist(rng)]));
  if (cue_dist(rng)) {
    std::uniform_int_distribution<int> pos(0, len);
    ids.insert(ids.begin() + pos(rng), vocab.cue_id());
  }
  ids.push_back(vocab.id(question(rng) ? "?" : "."));
  return ids;
}

namespace detail {

// Re-derives labels of turns >= 2 from their history.
inline void apply_context_rule(Dialogue& d, const Vocabulary& vocab) {
  std::vector<Emotion> es;
  std::vector<Intensity> is;
  for (std::size_t k = 0; k < d.utterances.size(); ++k) {
    auto& u = d.utterances[k];
    if (k >= 2) {
      const auto lbl = context_rule(es, is, u.transcript_tokens, vocab);
      u.emotion = lbl.emotion;
      u.intensity = lbl.intensity;
    }
    es.push_back(u.emotion);
    is.push_back(u.intensity);
  }
}

inline void render_features(Dialogue& d, const CorpusSpec& spec, std::uint64_t seed,
                            const std::vector<int>& frame_counts) {
  const SignatureParams sp{spec.noise_scale, spec.oscillation};
  for (std::size_t k = 0; k < d.utterances.size(); ++k) {
    auto& u = d.utterances[k];
    u.features = emotion_signature(u.emotion, u.intensity, frame_counts[k], spec.feature_dim,
                                   derive_seed(seed, "utt" + std::to_string(k)), sp);
  }
}

inline void validate_spec(const CorpusSpec& s) {
  require(s.num_dialogues >= 1, ErrorKind::kConfig, "corpus.num_dialogues must be >= 1");
  require(s.min_utterances >= 3 && s.max_utterances >= s.min_utterances,
          ErrorKind::kConfig, "corpus utterance range must satisfy 3 <= min <= max");
  require(s.max_utterances <= 10, ErrorKind::kConfig,
          "corpus.max_utterances must be <= 10 (single-digit turn prefixes)");
  require(s.feature_dim >= 8, ErrorKind::kConfig, "corpus.feature_dim must be >= 8");
  require(s.min_frames >= 4 && s.max_frames >= s.min_frames, ErrorKind::kConfig,
          "corpus frame range must satisfy 4 <= min <= max");
  require(s.train_ratio >= 0 && s.val_ratio >= 0 && s.test_ratio >= 0, ErrorKind::kConfig,
          "corpus split ratios must be non-negative");
  require(std::abs(s.train_ratio + s.val_ratio + s.test_ratio - 1.0) < 1e-9,
          ErrorKind::kConfig, "corpus split ratios must sum to 1.0");
  require(s.num_speakers >= 2, ErrorKind::kConfig, "corpus.num_speakers must be >= 2");
  require(s.noise_scale >= 0 && s.cue_rate >= 0 && s.cue_rate <= 1 && s.oscillation >= 0 &&
              s.oscillation <= 1 && s.twin_rate >= 0 && s.twin_rate <= 1,
          ErrorKind::kConfig, "corpus noise/cue/oscillation/twin settings out of range");
  Vocabulary v;
  require(s.vocab_size == 0 || s.vocab_size == v.size(), ErrorKind::kConfig,
          "corpus.vocab_size must be 0 or " + std::to_string(v.size()));
}

struct SplitSizes {
  int train, val, test;
};

inline SplitSizes split_sizes(const CorpusSpec& s) {
  const int n = s.num_dialogues;
  SplitSizes z{static_cast<int>(std::floor(n * s.train_ratio + 1e-9)),
               static_cast<int>(std::floor(n * s.val_ratio + 1e-9)), 0};
  z.test = n - z.train - z.val;
  const int wanted = (s.train_ratio > 0) + (s.val_ratio > 0) + (s.test_ratio > 0);
  const int got = (z.train > 0) + (z.val > 0) + (z.test > 0);
  if (got < wanted || (s.test_ratio == 0 && z.test > 0)) {
    fail(ErrorKind::kConfig, "cannot split " + std::to_string(n) + " dialogue(s) into " +
                                 std::to_string(wanted) + " non-empty splits");
  }
  return z;
}

}  // namespace detail

// One dialogue; `index` seeds it independently of every other dialogue.
inline Dialogue generate_dialogue(const CorpusSpec& spec, std::uint64_t index,
                                  const Vocabulary& vocab) {
  const std::uint64_t seed = derive_seed(spec.seed, index);
  Rng rng(seed);
  std::uniform_int_distribution<int> n_utt(spec.min_utterances, spec.max_utterances);
  std::uniform_int_distribution<int> n_frames(spec.min_frames, spec.max_frames);
  std::uniform_int_distribution<int> spk(0, spec.num_speakers - 1);
  std::uniform_int_distribution<int> emo(0, kNumEmotions - 1);
  std::uniform_int_distribution<int> inten(0, kNumIntensities - 1);

  Dialogue d;
  d.dialogue_id = "d" + std::to_string(index);
  const int count = n_utt(rng);
  const int a = spk(rng);
  int b = spk(rng);
  while (b == a) b = spk(rng);
  std::uniform_int_distribution<int> cur(2, count - 1);
  d.current_turn = cur(rng);
  std::vector<int> frames;
  for (int k = 0; k < count; ++k) {
    Utterance u;
    u.record_id = d.dialogue_id + "_u" + std::to_string(k);
    u.speaker_id = (k % 2 == 0) ? a : b;
    u.transcript_tokens = random_transcript(rng, spec.cue_rate, vocab);
    u.emotion = emotion_from_index(emo(rng));
    u.intensity = intensity_from_index(inten(rng));
    frames.push_back(n_frames(rng));
    d.utterances.push_back(std::move(u));
  }
  detail::apply_context_rule(d, vocab);
  detail::render_features(d, spec, seed, frames);
  return d;
}

// Same transcripts and speakers as `base`, different opening emotions chosen
// so that the current-turn target emotion differs.
inline Dialogue make_twin(const Dialogue& base, const CorpusSpec& spec, std::uint64_t index,
                          const Vocabulary& vocab) {
  const std::uint64_t seed = derive_seed(spec.seed, index);
  Rng rng(derive_seed(seed, "twin"));
  std::uniform_int_distribution<int> emo(0, kNumEmotions - 1);
  Dialogue d = base;
  d.dialogue_id = "d" + std::to_string(index);
  for (std::size_t k = 0; k < d.utterances.size(); ++k) {
    d.utterances[k].record_id = d.dialogue_id + "_u" + std::to_string(k);
  }
  const Emotion target = base.utterances[static_cast<std::size_t>(base.current_turn)].emotion;
  for (int attempt = 0; attempt < 64; ++attempt) {
    for (int k = 0; k < 2; ++k) {
      d.utterances[static_cast<std::size_t>(k)].emotion = emotion_from_index(emo(rng));
    }
    detail::apply_context_rule(d, vocab);
    if (d.utterances[static_cast<std::size_t>(d.current_turn)].emotion != target) break;
  }
  std::vector<int> frames;
  for (const auto& u : base.utterances) frames.push_back(u.duration_frames());
  detail::render_features(d, spec, seed, frames);
  return d;
}

inline Corpus generate_corpus(const CorpusSpec& spec) {
  detail::validate_spec(spec);
  const auto sizes = detail::split_sizes(spec);
  Vocabulary vocab;
  std::vector<Dialogue> all;
  all.reserve(static_cast<std::size_t>(spec.num_dialogues));
  for (int i = 0; i < spec.num_dialogues; ++i) {
    Rng twin_rng(derive_seed(spec.seed ^ 0x7417ULL, static_cast<std::uint64_t>(i)));
    const bool twin = i > 0 && std::bernoulli_distribution(spec.twin_rate)(twin_rng);
    all.push_back(twin ? make_twin(all.back(), spec, static_cast<std::uint64_t>(i), vocab)
                       : generate_dialogue(spec, static_cast<std::uint64_t>(i), vocab));
  }
  std::vector<std::size_t> order(all.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng shuffle_rng(derive_seed(spec.seed, "split"));
  std::shuffle(order.begin(), order.end(), shuffle_rng);
  Corpus c;
  c.spec = spec;
  for (std::size_t j = 0; j < order.size(); ++j) {
    auto& dst = j < static_cast<std::size_t>(sizes.train) ? c.train
                : j < static_cast<std::size_t>(sizes.train + sizes.val) ? c.val
                                                                         : c.test;
    dst.push_back(std::move(all[order[j]]));
  }
  return c;
}

// Extra text-only dialogues (no features) for PLoRA-T pre-training.
inline std::vector<Dialogue> generate_text_dialogues(const CorpusSpec& spec, int count,
                                                     std::uint64_t seed) {
  Vocabulary vocab;
  CorpusSpec s = spec;
  s.seed = seed;
  std::vector<Dialogue> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const auto idx = static_cast<std::uint64_t>(i);
    Rng rng(derive_seed(s.seed, idx));
    std::uniform_int_distribution<int> n_utt(s.min_utterances, s.max_utterances);
    std::uniform_int_distribution<int> spk(0, s.num_speakers - 1);
    std::uniform_int_distribution<int> emo(0, kNumEmotions - 1);
    std::uniform_int_distribution<int> inten(0, kNumIntensities - 1);
    Dialogue d;
    d.dialogue_id = "t" + std::to_string(i);
    const int n = n_utt(rng);
    const int a = spk(rng);
    int b = spk(rng);
    while (b == a) b = spk(rng);
    std::uniform_int_distribution<int> cur(2, n - 1);
    d.current_turn = cur(rng);
    for (int k = 0; k < n; ++k) {
      Utterance u;
      u.record_id = d.dialogue_id + "_u" + std::to_string(k);
      u.speaker_id = (k % 2 == 0) ? a : b;
      u.transcript_tokens = random_transcript(rng, s.cue_rate, vocab);
      u.emotion = emotion_from_index(emo(rng));
      u.intensity = intensity_from_index(inten(rng));
      d.utterances.push_back(std::move(u));
    }
    detail::apply_context_rule(d, vocab);
    out.push_back(std::move(d));
  }
  return out;
}

// Structural checks of a single dialogue.
inline void validate_dialogue(const Dialogue& d, bool need_features = true) {
  const int n = d.last_turn();
  require(n >= 2, ErrorKind::kConfig,
          "dialogue " + d.dialogue_id + ": needs at least 3 utterances (N >= 2)");
  require(d.current_turn >= 2 && d.current_turn <= n, ErrorKind::kConfig,
          "dialogue " + d.dialogue_id + ": current turn c=" + std::to_string(d.current_turn) +
              " violates c in [2, N] with N=" + std::to_string(n));
  for (std::size_t k = 0; k < d.utterances.size(); ++k) {
    const auto& u = d.utterances[k];
    require(u.speaker_id == d.utterances[k % 2].speaker_id, ErrorKind::kConfig,
            "dialogue " + d.dialogue_id + ": speakers must alternate");
    if (need_features) {
      require(u.features.rows() >= 4 && u.features.allFinite(), ErrorKind::kConfig,
              "utterance " + u.record_id + ": needs >= 4 finite feature frames");
    }
  }
  require(d.utterances[0].speaker_id != d.utterances[1].speaker_id, ErrorKind::kConfig,
          "dialogue " + d.dialogue_id + ": speakers must alternate");
}

// ---------------------------------------------------------------------------
// Serialization: manifest.json + one frame file per utterance under
// <split>/<record_id>.bin.

namespace detail {

inline nlohmann::json spec_to_json(const CorpusSpec& s) {
  return {{"num_dialogues", s.num_dialogues}, {"min_utterances", s.min_utterances},
          {"max_utterances", s.max_utterances}, {"feature_dim", s.feature_dim},
          {"min_frames", s.min_frames},         {"max_frames", s.max_frames},
          {"vocab_size", s.vocab_size},         {"train_ratio", s.train_ratio},
          {"val_ratio", s.val_ratio},           {"test_ratio", s.test_ratio},
          {"seed", s.seed},                     {"noise_scale", s.noise_scale},
          {"oscillation", s.oscillation},       {"cue_rate", s.cue_rate},
          {"num_speakers", s.num_speakers},     {"twin_rate", s.twin_rate}};
}

inline CorpusSpec spec_from_json(const nlohmann::json& j) {
  CorpusSpec s;
  s.num_dialogues = j.at("num_dialogues").get<int>();
  s.min_utterances = j.at("min_utterances").get<int>();
  s.max_utterances = j.at("max_utterances").get<int>();
  s.feature_dim = j.at("feature_dim").get<int>();
  s.min_frames = j.at("min_frames").get<int>();
  s.max_frames = j.at("max_frames").get<int>();
  s.vocab_size = j.at("vocab_size").get<int>();
  s.train_ratio = j.at("train_ratio").get<double>();
  s.val_ratio = j.at("val_ratio").get<double>();
  s.test_ratio = j.at("test_ratio").get<double>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.noise_scale = j.at("noise_scale").get<double>();
  s.oscillation = j.at("oscillation").get<double>();
  s.cue_rate = j.at("cue_rate").get<double>();
  s.num_speakers = j.at("num_speakers").get<int>();
  s.twin_rate = j.at("twin_rate").get<double>();
  return s;
}

}  // namespace detail

// Writes the dialogues of one split; returns their manifest records.
inline nlohmann::json save_dialogues(const std::vector<Dialogue>& dialogues,
                                     const std::filesystem::path& root, const std::string& split,
                                     const Vocabulary& vocab) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& d : dialogues) {
    nlohmann::json jd;
    jd["dialogue_id"] = d.dialogue_id;
    jd["current_turn"] = d.current_turn;
    jd["utterances"] = nlohmann::json::array();
    for (const auto& u : d.utterances) {
      const std::string rel = split + "/" + u.record_id + ".bin";
      const auto bytes = io::encode_frames(u.features);
      io::write_bytes(root / rel, bytes);
      jd["utterances"].push_back({{"record_id", u.record_id},
                                  {"speaker_id", u.speaker_id},
                                  {"transcript", vocab.detokenize(u.transcript_tokens)},
                                  {"emotion", std::string(to_string(u.emotion))},
                                  {"intensity", std::string(to_string(u.intensity))},
                                  {"frames", u.features.rows()},
                                  {"features", rel},
                                  {"sha256", sha256_hex(bytes.data(), bytes.size())}});
    }
    arr.push_back(std::move(jd));
  }
  return arr;
}

inline nlohmann::json vocabulary_json(const Vocabulary& vocab) {
  const AnswerSchema schema(vocab);
  return {{"words", vocab.words()},
          {"answer_template", "emotion: <emotion> intensity: <intensity>"},
          {"terminator", "<eos>"},
          {"emotions", kEmotionNames},
          {"intensities", kIntensityNames},
          {"cue_word", std::string(Vocabulary::kCueWord)}};
}

inline void save_corpus(const Corpus& corpus, const std::filesystem::path& root) {
  Vocabulary vocab;
  std::filesystem::create_directories(root);
  nlohmann::json m;
  m["schema_version"] = kCorpusSchemaVersion;
  m["spec"] = detail::spec_to_json(corpus.spec);
  m["vocabulary"] = vocabulary_json(vocab);
  m["splits"]["train"] = save_dialogues(corpus.train, root, "train", vocab);
  m["splits"]["val"] = save_dialogues(corpus.val, root, "val", vocab);
  m["splits"]["test"] = save_dialogues(corpus.test, root, "test", vocab);
  io::write_text(root / "manifest.json", m.dump(1) + "\n");
}

// Parses dialogue records; feature paths are relative to `root`.
inline std::vector<Dialogue> load_dialogues(const nlohmann::json& arr,
                                            const std::filesystem::path& root,
                                            const Vocabulary& vocab) {
  std::vector<Dialogue> out;
  for (const auto& jd : arr) {
    Dialogue d;
    try {
      d.dialogue_id = jd.at("dialogue_id").get<std::string>();
      d.current_turn = jd.at("current_turn").get<int>();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::kFormat, std::string("malformed dialogue record: ") + e.what());
    }
    for (const auto& ju : jd.at("utterances")) {
      Utterance u;
      std::string emo, inten, transcript, rel, sha;
      int frames = 0;
      try {
        u.record_id = ju.at("record_id").get<std::string>();
        u.speaker_id = ju.at("speaker_id").get<int>();
        transcript = ju.at("transcript").get<std::string>();
        emo = ju.at("emotion").get<std::string>();
        inten = ju.at("intensity").get<std::string>();
        frames = ju.at("frames").get<int>();
        rel = ju.at("features").get<std::string>();
        sha = ju.at("sha256").get<std::string>();
      } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::kFormat, "malformed utterance record in dialogue " + d.dialogue_id +
                                     ": " + e.what());
      }
      const auto e = try_parse_emotion(emo);
      require(e.has_value(), ErrorKind::kFormat,
              "record " + u.record_id + ": unknown emotion '" + emo + "'");
      const auto i = try_parse_intensity(inten);
      require(i.has_value(), ErrorKind::kFormat,
              "record " + u.record_id + ": unknown intensity '" + inten + "'");
      u.emotion = *e;
      u.intensity = *i;
      u.transcript_tokens = vocab.tokenize(transcript);
      const auto bytes = io::read_bytes(root / rel);
      require(sha256_hex(bytes.data(), bytes.size()) == sha, ErrorKind::kFormat,
              "record " + u.record_id + ": checksum mismatch for " + rel);
      u.features = io::decode_frames(bytes, rel);
      require(u.features.rows() == frames, ErrorKind::kFormat,
              "record " + u.record_id + ": frame count differs from manifest");
      d.utterances.push_back(std::move(u));
    }
    out.push_back(std::move(d));
  }
  return out;
}

inline Corpus load_corpus(const std::filesystem::path& root) {
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(io::read_text(root / "manifest.json"));
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::kFormat, std::string("malformed corpus manifest: ") + e.what());
  }
  require(m.contains("schema_version") && m["schema_version"] == kCorpusSchemaVersion,
          ErrorKind::kFormat, "corpus manifest schema version mismatch");
  Vocabulary vocab;
  require(m.at("vocabulary").at("words").get<std::vector<std::string>>() == vocab.words(),
          ErrorKind::kFormat, "corpus vocabulary differs from the built-in vocabulary");
  Corpus c;
  try {
    c.spec = detail::spec_from_json(m.at("spec"));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kFormat, std::string("malformed corpus spec: ") + e.what());
  }
  c.train = load_dialogues(m.at("splits").at("train"), root, vocab);
  c.val = load_dialogues(m.at("splits").at("val"), root, vocab);
  c.test = load_dialogues(m.at("splits").at("test"), root, vocab);
  return c;
}

// ---------------------------------------------------------------------------
// Synthetic acoustic ground truth for stage 3.

struct AcousticTargets {
  std::vector<int> durations;  // frames per token, >= 1
  std::vector<float> pitch;    // per frame, normalized log-f0 units
  std::vector<float> energy;   // per frame
  MatF mel;                    // frames x mel_bins
};

inline AcousticTargets acoustic_targets(const std::vector<int>& tokens, int speaker_id,
                                        Emotion e, Intensity i, int mel_bins) {
  static constexpr double kPitch[kNumEmotions] = {0.5, -0.4, 0.8, 0.3, 0.4, -0.2, 0.0};
  static constexpr double kEnergy[kNumEmotions] = {0.4, -0.5, 0.3, 0.7, -0.2, 0.1, 0.0};
  static constexpr int kSlow[kNumEmotions] = {0, 1, 0, 0, 0, 1, 0};
  require(!tokens.empty(), ErrorKind::kShape, "acoustic_targets: empty token sequence");
  const double gain = intensity_gain(i);
  AcousticTargets t;
  for (int tok : tokens) t.durations.push_back(1 + (tok % 3) + kSlow[index_of(e)]);
  int frames = 0;
  for (int d : t.durations) frames += d;
  t.mel = MatF(frames, mel_bins);
  int f = 0;
  for (std::size_t k = 0; k < tokens.size(); ++k) {
    const double center = (tokens[k] * 7 % 97) / 97.0 * mel_bins;
    for (int j = 0; j < t.durations[k]; ++j, ++f) {
      const double pos = (j + 0.5) / t.durations[k];
      const double p = 0.3 * (speaker_id % 4) - 0.45 + kPitch[index_of(e)] * gain +
                       0.1 * std::sin(std::numbers::pi * pos);
      const double en = kEnergy[index_of(e)] * gain + 0.2 * std::sin(std::numbers::pi * pos);
      t.pitch.push_back(static_cast<float>(p));
      t.energy.push_back(static_cast<float>(en));
      const double width = std::max(1.0, mel_bins / 10.0);
      for (int b = 0; b < mel_bins; ++b) {
        const double z = (b - center) / width;
        t.mel(f, b) = static_cast<float>(en + std::exp(-0.5 * z * z) +
                                         0.3 * p * std::cos(std::numbers::pi * b / mel_bins));
      }
    }
  }
  return t;
}

}  // namespace jelly
