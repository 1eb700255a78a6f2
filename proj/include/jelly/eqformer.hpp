// Copyright 2026 The jelly-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Layered speech encoder stand-in and the EQ-former (TLTR -> Q-former ->
// projection) that turns one utterance into a fixed number of emotion
// embedding rows in the language model's embedding space.

#include <optional>
#include <string>
#include <vector>

#include "jelly/nn.hpp"

namespace jelly {

struct EncoderConfig {
  int feature_dim = 24;
  int dim = 32;
  int layers = 6;
  int heads = 4;
};

struct EqFormerConfig {
  int num_query_tokens = 8;
  int query_dim = 64;
  int num_qformer_blocks = 2;
  int qformer_heads = 4;
  int tltr_heads = 4;
  int projection_out_dim = 64;  // must equal the LM embedding width
  bool use_tltr = true;
  bool use_qformer = true;
};

// Post-block states of every encoder block at the downsampled frame rate.
template <typename T>
struct LayeredEncoding {
  std::vector<Mat<T>> layers;
  Mask frame_mask;
  int stride = 2;

  Eigen::Index frames() const { return layers.empty() ? 0 : layers.front().rows(); }
};

// Frame validity after stride-2 merging: a merged frame is valid when either
// of its source frames is.
inline Mask downsample_mask(const Mask& mask) {
  Mask out((mask.size() + 1) / 2, 0);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) out[i / 2] = 1;
  }
  return out;
}

template <typename T>
class LayeredEncoder {
 public:
  LayeredEncoder(ParamStore<T>& store, const EncoderConfig& cfg, std::uint64_t seed)
      : cfg_(cfg) {
    require(cfg.layers >= 1 && cfg.dim % cfg.heads == 0, ErrorKind::kConfig,
            "encoder: layers >= 1 and dim divisible by heads required");
    merge_ = nn::Linear<T>::make(store, "encoder.merge", ParamGroup::kEncoder,
                                 2 * cfg.feature_dim, cfg.dim, true, seed);
    for (int l = 0; l < cfg.layers; ++l) {
      blocks_.push_back(nn::SelfAttentionBlock<T>::make(
          store, "encoder.block" + std::to_string(l), ParamGroup::kEncoder, cfg.dim,
          cfg.heads, seed));
    }
  }

  const EncoderConfig& config() const { return cfg_; }

  // Differentiable form (used by gradient checks); returns one Var per block.
  std::vector<ag::Var<T>> encode(ag::Tape<T>& t, const Mat<T>& features, const Mask& mask,
                                 Mask* merged_mask = nullptr) const {
    const Eigen::Index frames = features.rows();
    require(frames >= 1, ErrorKind::kShape, "encode_layers: need at least one frame");
    require(features.cols() == cfg_.feature_dim, ErrorKind::kShape,
            "encode_layers: feature width " + std::to_string(features.cols()) +
                " != configured " + std::to_string(cfg_.feature_dim));
    require(static_cast<Eigen::Index>(mask.size()) == frames, ErrorKind::kShape,
            "encode_layers: mask length != frame count");
    // Masked frames are zeroed so that nothing downstream can see them.
    const Eigen::Index half = (frames + 1) / 2;
    Mat<T> merged = Mat<T>::Zero(half, 2 * cfg_.feature_dim);
    for (Eigen::Index i = 0; i < frames; ++i) {
      if (!mask[static_cast<std::size_t>(i)]) continue;
      merged.block(i / 2, (i % 2) * cfg_.feature_dim, 1, cfg_.feature_dim) = features.row(i);
    }
    Mask m2 = downsample_mask(mask);
    auto x = merge_(t, t.constant(std::move(merged)));
    x = ag::add(x, t.constant(nn::sinusoid_positions<T>(half, cfg_.dim)));
    std::vector<ag::Var<T>> out;
    ag::AttentionMask am{false, &m2};
    for (const auto& b : blocks_) {
      x = b(t, x, am);
      out.push_back(x);
    }
    if (merged_mask) *merged_mask = std::move(m2);
    return out;
  }

  LayeredEncoding<T> encode_layers(const Mat<T>& features, const Mask& mask) const {
    ag::Tape<T> t(false);
    LayeredEncoding<T> enc;
    auto vars = encode(t, features, mask, &enc.frame_mask);
    for (auto& v : vars) enc.layers.push_back(v.value());
    return enc;
  }

  LayeredEncoding<T> encode_layers(const Mat<T>& features) const {
    return encode_layers(features, Mask(static_cast<std::size_t>(features.rows()), 1));
  }

 private:
  EncoderConfig cfg_;
  nn::Linear<T> merge_;
  std::vector<nn::SelfAttentionBlock<T>> blocks_;
};

template <typename T>
struct EqFormerOutput {
  ag::Var<T> embedding;      // rows x lm_dim
  ag::Var<T> features;       // emotion feature sequence fed to the Q-former
  ag::Var<T> layer_weights;  // L x 1 probability vector; invalid without TLTR
};

template <typename T>
class EqFormer {
 public:
  EqFormer(ParamStore<T>& store, const EqFormerConfig& cfg, const EncoderConfig& enc,
           std::uint64_t seed)
      : cfg_(cfg), enc_dim_(enc.dim) {
    require(cfg.num_query_tokens >= 1, ErrorKind::kConfig, "eqformer: need >= 1 query token");
    require(cfg.query_dim % cfg.qformer_heads == 0 && enc.dim % cfg.tltr_heads == 0,
            ErrorKind::kConfig, "eqformer: widths must be divisible by head counts");
    if (cfg.use_tltr) {
      time_block_ = nn::SelfAttentionBlock<T>::make(store, "eqformer.tltr.time",
                                                    ParamGroup::kTltr, enc.dim,
                                                    cfg.tltr_heads, seed);
      layer_key_ = nn::Linear<T>::make(store, "eqformer.tltr.layer_attn.key",
                                       ParamGroup::kTltr, enc.dim, enc.dim, true, seed);
      layer_query_ = &store.add("eqformer.tltr.layer_attn.query", ParamGroup::kTltr,
                                nn::init_normal<T>(seed, "eqformer.tltr.layer_attn.query", 1,
                                                   enc.dim, 1.0 / std::sqrt(enc.dim)));
    }
    if (cfg.use_qformer) {
      queries_ = &store.add("eqformer.qformer.queries", ParamGroup::kQformer,
                            nn::init_normal<T>(seed, "eqformer.qformer.queries",
                                               cfg.num_query_tokens, cfg.query_dim, 1.0));
      for (int b = 0; b < cfg.num_qformer_blocks; ++b) {
        const std::string n = "eqformer.qformer.block" + std::to_string(b);
        QBlock qb;
        qb.self_attn = nn::AttentionSublayer<T>::make(store, n + ".self", ParamGroup::kQformer,
                                                      cfg.query_dim, cfg.qformer_heads, seed);
        qb.cross_attn = nn::AttentionSublayer<T>::make(store, n + ".cross", ParamGroup::kQformer,
                                                       cfg.query_dim, cfg.qformer_heads, seed,
                                                       enc.dim);
        qb.ff = nn::FeedForwardSublayer<T>::make(store, n + ".ff", ParamGroup::kQformer,
                                                 cfg.query_dim, seed);
        qblocks_.push_back(qb);
      }
      ln_out_ = nn::LayerNorm<T>::make(store, "eqformer.qformer.ln_out", ParamGroup::kQformer,
                                       cfg.query_dim);
      projection_ = nn::Linear<T>::make(store, "eqformer.projection", ParamGroup::kProjection,
                                        cfg.query_dim, cfg.projection_out_dim, true, seed);
    } else {
      projection_ = nn::Linear<T>::make(store, "eqformer.projection", ParamGroup::kProjection,
                                        enc.dim, cfg.projection_out_dim, true, seed);
    }
  }

  const EqFormerConfig& config() const { return cfg_; }

  // Rows of the emotion embedding produced per utterance.
  int output_rows() const { return cfg_.use_qformer ? cfg_.num_query_tokens : 1; }

  // Time transformer per layer, then attention pooling over layer summaries
  // whose weights mix the per-layer sequences frame by frame.
  std::pair<ag::Var<T>, ag::Var<T>> tltr(ag::Tape<T>& t, const std::vector<ag::Var<T>>& layers,
                                         const Mask& mask) const {
    require(cfg_.use_tltr, ErrorKind::kConfig, "tltr: module disabled by ablation");
    require(!layers.empty(), ErrorKind::kShape, "tltr: no layers");
    ag::AttentionMask am{false, &mask};
    std::vector<ag::Var<T>> timed;
    std::vector<ag::Var<T>> summaries;
    for (const auto& l : layers) {
      auto h = time_block_(t, l, am);
      timed.push_back(h);
      summaries.push_back(ag::masked_mean_rows(h, mask));
    }
    auto keys = layer_key_(t, ag::concat_rows(summaries));  // L x d
    auto scores = ag::scale(ag::linear(keys, t.param(*layer_query_)),
                            T(1) / std::sqrt(static_cast<T>(enc_dim_)));  // L x 1
    auto weights = ag::softmax_all(scores);
    return {ag::weighted_sum(timed, weights), weights};
  }

  ag::Var<T> qformer(ag::Tape<T>& t, ag::Var<T> features, const Mask& mask) const {
    require(cfg_.use_qformer, ErrorKind::kConfig, "qformer: module disabled by ablation");
    require(std::any_of(mask.begin(), mask.end(), [](std::uint8_t m) { return m != 0; }),
            ErrorKind::kShape, "qformer: every frame is masked, nothing to attend to");
    ag::AttentionMask cross{false, &mask};
    auto q = t.param(*queries_);
    for (const auto& b : qblocks_) {
      q = b.self_attn(t, q, ag::AttentionMask{});
      q = b.cross_attn(t, q, features, cross);
      q = b.ff(t, q);
    }
    return ln_out_(t, q);
  }

  ag::Var<T> project(ag::Tape<T>& t, ag::Var<T> query_outputs) const {
    require(query_outputs.cols() == projection_.in(), ErrorKind::kShape,
            "project: query output width mismatch");
    return projection_(t, query_outputs);
  }

  EqFormerOutput<T> forward(ag::Tape<T>& t, const std::vector<ag::Var<T>>& layers,
                            const Mask& mask) const {
    require(!layers.empty(), ErrorKind::kShape, "eqformer: empty encoding");
    require(std::any_of(mask.begin(), mask.end(), [](std::uint8_t m) { return m != 0; }),
            ErrorKind::kShape, "eqformer: every frame is masked");
    EqFormerOutput<T> out;
    if (cfg_.use_tltr) {
      auto [f, w] = tltr(t, layers, mask);
      out.features = f;
      out.layer_weights = w;
    } else {
      out.features = layers.back();
    }
    if (cfg_.use_qformer) {
      out.embedding = project(t, qformer(t, out.features, mask));
    } else {
      out.embedding = project(t, ag::masked_mean_rows(out.features, mask));
    }
    return out;
  }

  EqFormerOutput<T> forward(ag::Tape<T>& t, const LayeredEncoding<T>& enc) const {
    std::vector<ag::Var<T>> layers;
    for (const auto& l : enc.layers) layers.push_back(t.constant(l));
    return forward(t, layers, enc.frame_mask);
  }

  nn::Linear<T>& projection() { return projection_; }

 private:
  struct QBlock {
    nn::AttentionSublayer<T> self_attn;
    nn::AttentionSublayer<T> cross_attn;
    nn::FeedForwardSublayer<T> ff;
  };

  EqFormerConfig cfg_;
  int enc_dim_;
  nn::SelfAttentionBlock<T> time_block_;
  nn::Linear<T> layer_key_;
  Param<T>* layer_query_ = nullptr;
  Param<T>* queries_ = nullptr;
  std::vector<QBlock> qblocks_;
  nn::LayerNorm<T> ln_out_;
  nn::Linear<T> projection_;
};

}  // namespace jelly
