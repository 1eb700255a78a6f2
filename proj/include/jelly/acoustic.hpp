// Copyright 2026 The jelly-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Miniature non-autoregressive synthesizer: token encoder, emotion /
// intensity / speaker tables added at the encoder output, variance adaptor
// (duration, pitch, energy), length regulator and mel decoder. Durations and
// pitch/energy are teacher-forced in training and predicted at synthesis.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "jelly/corpus.hpp"
#include "jelly/nn.hpp"

namespace jelly {

struct AcousticConfig {
  int vocab_size = 0;  // 0: built-in vocabulary size
  int mel_bins = 80;
  int dim = 64;
  int heads = 4;
  int encoder_blocks = 2;
  int decoder_blocks = 2;
  int predictor_hidden = 64;
  int num_speakers = 4;
  int max_duration = 32;  // frames per token at synthesis
};

struct SynthesisOutput {
  MatF mel;                  // frames x mel_bins
  std::vector<int> durations;
  std::vector<float> pitch;  // per frame
  std::vector<float> energy;  // per frame

  int frames() const { return static_cast<int>(mel.rows()); }
};

template <typename T>
struct AcousticLoss {
  ag::Var<T> total;
  double mel = 0.0;
  double duration = 0.0;
  double pitch = 0.0;
  double energy = 0.0;
};

template <typename T>
class AcousticModel {
 public:
  AcousticModel(ParamStore<T>& store, AcousticConfig cfg, std::uint64_t seed) : cfg_(cfg) {
    if (cfg_.vocab_size == 0) cfg_.vocab_size = Vocabulary().size();
    require(cfg_.mel_bins >= 1, ErrorKind::kConfig, "acoustic.mel_bins: must be >= 1");
    require(cfg_.dim % cfg_.heads == 0, ErrorKind::kConfig,
            "acoustic.dim: must be divisible by heads");
    require(cfg_.num_speakers >= 1 && cfg_.max_duration >= 1, ErrorKind::kConfig,
            "acoustic: num_speakers and max_duration must be >= 1");
    const auto G = ParamGroup::kAcoustic;
    const int d = cfg_.dim;
    auto table = [&](const std::string& n, int rows) {
      return &store.add(n, G, nn::init_normal<T>(seed, n, rows, d, 0.5));
    };
    tok_emb_ = table("acoustic.tok_emb", cfg_.vocab_size);
    emotion_emb_ = table("acoustic.emotion_emb", kNumEmotions);
    intensity_emb_ = table("acoustic.intensity_emb", kNumIntensities);
    speaker_emb_ = table("acoustic.speaker_emb", cfg_.num_speakers);
    for (int b = 0; b < cfg_.encoder_blocks; ++b) {
      encoder_.push_back(nn::SelfAttentionBlock<T>::make(
          store, "acoustic.encoder.block" + std::to_string(b), G, d, cfg_.heads, seed));
    }
    duration_ = Predictor::make(store, "acoustic.duration", d, cfg_.predictor_hidden, seed);
    pitch_ = Predictor::make(store, "acoustic.pitch", d, cfg_.predictor_hidden, seed);
    energy_ = Predictor::make(store, "acoustic.energy", d, cfg_.predictor_hidden, seed);
    pitch_proj_ = nn::Linear<T>::make(store, "acoustic.pitch_proj", G, 1, d, true, seed, 0.5);
    energy_proj_ = nn::Linear<T>::make(store, "acoustic.energy_proj", G, 1, d, true, seed, 0.5);
    for (int b = 0; b < cfg_.decoder_blocks; ++b) {
      decoder_.push_back(nn::SelfAttentionBlock<T>::make(
          store, "acoustic.decoder.block" + std::to_string(b), G, d, cfg_.heads, seed));
    }
    ln_out_ = nn::LayerNorm<T>::make(store, "acoustic.ln_out", G, d);
    mel_head_ = nn::Linear<T>::make(store, "acoustic.mel_head", G, d, cfg_.mel_bins, true, seed);
  }

  const AcousticConfig& config() const { return cfg_; }

  // Token encoder output with the conditioning rows added at every position.
  ag::Var<T> encode(ag::Tape<T>& t, const std::vector<int>& tokens, int speaker, Emotion e,
                    Intensity i) const {
    check_inputs(tokens, speaker);
    const auto n = static_cast<Eigen::Index>(tokens.size());
    auto x = ag::gather_rows(t.param(*tok_emb_), tokens);
    x = ag::add(x, t.constant(nn::sinusoid_positions<T>(n, cfg_.dim)));
    for (const auto& b : encoder_) x = b(t, x, ag::AttentionMask{});
    x = ag::add_row(x, ag::gather_rows(t.param(*emotion_emb_), {index_of(e)}));
    x = ag::add_row(x, ag::gather_rows(t.param(*intensity_emb_), {index_of(i)}));
    return ag::add_row(x, ag::gather_rows(t.param(*speaker_emb_), {speaker}));
  }

  // Predicted log-durations (tokens x 1) of an encoded sequence.
  ag::Var<T> log_durations(ag::Tape<T>& t, ag::Var<T> encoded) const {
    return duration_(t, encoded);
  }

  // Pitch and energy predictions (frames x 1) over length-regulated states.
  std::pair<ag::Var<T>, ag::Var<T>> variance(ag::Tape<T>& t, ag::Var<T> frames) const {
    return {pitch_(t, frames), energy_(t, frames)};
  }

  // Mel frames from length-regulated states and the pitch/energy tracks fed
  // to the decoder (targets in training, predictions at synthesis).
  ag::Var<T> decode(ag::Tape<T>& t, ag::Var<T> frames, ag::Var<T> pitch,
                    ag::Var<T> energy) const {
    auto x = ag::add(frames, pitch_proj_(t, pitch));
    x = ag::add(x, energy_proj_(t, energy));
    x = ag::add(x, t.constant(nn::sinusoid_positions<T>(x.rows(), cfg_.dim)));
    for (const auto& b : decoder_) x = b(t, x, ag::AttentionMask{});
    return mel_head_(t, ln_out_(t, x));
  }

  // Teacher-forced training loss: MSE on mel, log-duration, pitch, energy.
  AcousticLoss<T> loss(ag::Tape<T>& t, const std::vector<int>& tokens, int speaker, Emotion e,
                       Intensity i, const AcousticTargets& target) const {
    require(target.durations.size() == tokens.size(), ErrorKind::kShape,
            "acoustic loss: one target duration per token");
    require(target.mel.cols() == cfg_.mel_bins, ErrorKind::kShape,
            "acoustic loss: target mel has " + std::to_string(target.mel.cols()) +
                " bins, model has " + std::to_string(cfg_.mel_bins));
    auto enc = encode(t, tokens, speaker, e, i);
    Mat<T> log_d(static_cast<Eigen::Index>(tokens.size()), 1);
    for (std::size_t k = 0; k < tokens.size(); ++k) {
      log_d(static_cast<Eigen::Index>(k), 0) = static_cast<T>(std::log(target.durations[k]));
    }
    auto frames = ag::expand_rows(enc, target.durations);
    const Mat<T> p = column(target.pitch), en = column(target.energy);
    require(p.rows() == frames.rows() && en.rows() == frames.rows() &&
                target.mel.rows() == frames.rows(),
            ErrorKind::kShape, "acoustic loss: target tracks do not match sum of durations");
    auto [pp, ep] = variance(t, frames);
    auto mel = decode(t, frames, t.constant(p), t.constant(en));
    AcousticLoss<T> out;
    auto l_mel = ag::mse(mel, Mat<T>(target.mel.template cast<T>()));
    auto l_dur = ag::mse(log_durations(t, enc), log_d);
    auto l_p = ag::mse(pp, p);
    auto l_e = ag::mse(ep, en);
    out.mel = static_cast<double>(l_mel.value()(0, 0));
    out.duration = static_cast<double>(l_dur.value()(0, 0));
    out.pitch = static_cast<double>(l_p.value()(0, 0));
    out.energy = static_cast<double>(l_e.value()(0, 0));
    out.total = ag::add(ag::add(l_mel, l_dur), ag::add(l_p, l_e));
    return out;
  }

  // Durations are exp(prediction) rounded and clamped to [1, max_duration].
  std::vector<int> round_durations(const Mat<T>& log_d) const {
    std::vector<int> d(static_cast<std::size_t>(log_d.rows()));
    for (Eigen::Index k = 0; k < log_d.rows(); ++k) {
      const double v = std::round(std::exp(static_cast<double>(log_d(k, 0))));
      d[static_cast<std::size_t>(k)] =
          static_cast<int>(std::clamp(std::isfinite(v) ? v : 1.0, 1.0,
                                      static_cast<double>(cfg_.max_duration)));
    }
    return d;
  }

  SynthesisOutput synthesize(const std::vector<int>& tokens, int speaker, Emotion e,
                             Intensity i) const {
    ag::Tape<T> t(false);
    auto enc = encode(t, tokens, speaker, e, i);
    SynthesisOutput out;
    out.durations = round_durations(log_durations(t, enc).value());
    auto frames = ag::expand_rows(enc, out.durations);
    auto [pp, ep] = variance(t, frames);
    auto mel = decode(t, frames, pp, ep);
    out.mel = mel.value().template cast<float>();
    for (Eigen::Index f = 0; f < pp.rows(); ++f) {
      out.pitch.push_back(static_cast<float>(pp.value()(f, 0)));
      out.energy.push_back(static_cast<float>(ep.value()(f, 0)));
    }
    return out;
  }

  Param<T>& emotion_table() { return *emotion_emb_; }
  Param<T>& intensity_table() { return *intensity_emb_; }

 private:
  // Position-wise two-layer predictor with a scalar output.
  struct Predictor {
    nn::LayerNorm<T> ln;
    nn::Linear<T> fc1, fc2;

    static Predictor make(ParamStore<T>& store, const std::string& name, int dim, int hidden,
                          std::uint64_t seed) {
      const auto G = ParamGroup::kAcoustic;
      Predictor p;
      p.ln = nn::LayerNorm<T>::make(store, name + ".ln", G, dim);
      p.fc1 = nn::Linear<T>::make(store, name + ".fc1", G, dim, hidden, true, seed);
      p.fc2 = nn::Linear<T>::make(store, name + ".fc2", G, hidden, 1, true, seed);
      return p;
    }

    ag::Var<T> operator()(ag::Tape<T>& t, ag::Var<T> x) const {
      return fc2(t, ag::gelu(fc1(t, ln(t, x))));
    }
  };

  static Mat<T> column(const std::vector<float>& v) {
    Mat<T> m(static_cast<Eigen::Index>(v.size()), 1);
    for (std::size_t k = 0; k < v.size(); ++k) m(static_cast<Eigen::Index>(k), 0) = v[k];
    return m;
  }

  void check_inputs(const std::vector<int>& tokens, int speaker) const {
    require(!tokens.empty(), ErrorKind::kShape, "synthesize_mel: empty token sequence");
    for (int tok : tokens) {
      require(tok >= 0 && tok < cfg_.vocab_size, ErrorKind::kDomain,
              "synthesize_mel: token id " + std::to_string(tok) + " out of range");
    }
    require(speaker >= 0 && speaker < cfg_.num_speakers, ErrorKind::kDomain,
            "synthesize_mel: speaker id " + std::to_string(speaker) + " out of range");
  }

  AcousticConfig cfg_;
  Param<T>* tok_emb_ = nullptr;
  Param<T>* emotion_emb_ = nullptr;
  Param<T>* intensity_emb_ = nullptr;
  Param<T>* speaker_emb_ = nullptr;
  std::vector<nn::SelfAttentionBlock<T>> encoder_;
  Predictor duration_, pitch_, energy_;
  nn::Linear<T> pitch_proj_, energy_proj_;
  std::vector<nn::SelfAttentionBlock<T>> decoder_;
  nn::LayerNorm<T> ln_out_;
  nn::Linear<T> mel_head_;
};

}  // namespace jelly
