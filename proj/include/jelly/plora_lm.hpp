// Copyright 2026 The jelly-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Small decoder-only language model whose query and value projections carry
// partial low-rank adapters routed by per-position modality: EMOTION rows go
// through PLoRA-E, TEXT rows through PLoRA-T. The base weights are frozen in
// every stage.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "jelly/nn.hpp"
#include "jelly/tokenizer.hpp"

namespace jelly {

enum class Modality : std::uint8_t { kText = 0, kEmotion = 1 };

enum class PloraMode { kMultiple, kSingleLora, kNone };

inline std::string_view to_string(PloraMode m) {
  switch (m) {
    case PloraMode::kMultiple: return "multiple";
    case PloraMode::kSingleLora: return "single_lora";
    case PloraMode::kNone: return "none";
  }
  return "?";
}

inline PloraMode parse_plora_mode(std::string_view s) {
  if (s == "multiple") return PloraMode::kMultiple;
  if (s == "single_lora") return PloraMode::kSingleLora;
  if (s == "none") return PloraMode::kNone;
  fail(ErrorKind::kConfig, "unknown plora_mode '" + std::string(s) + "'");
}

struct LmConfig {
  int vocab_size = 0;  // 0: built-in vocabulary size
  int dim = 64;
  int heads = 4;
  int blocks = 4;
  int max_positions = 512;
  int rank = 8;
  double scale = 4.0;  // contribution is scale * B * A * x
  double adapter_init_std = 0.02;
  PloraMode plora_mode = PloraMode::kMultiple;
};

template <typename T>
struct AdapterPair {
  Param<T>* a = nullptr;  // rank x d_in
  Param<T>* b = nullptr;  // d_out x rank
};

// One adapted projection: frozen base plus the adapter serving each modality.
// Under single-LoRA both routes point at the same pair.
template <typename T>
struct AdaptedProjection {
  nn::Linear<T> base;
  std::optional<AdapterPair<T>> emotion;
  std::optional<AdapterPair<T>> text;
};

// y_p = W x_p + b + s * B_m A_m x_p with m = modality(p). Rows are grouped by
// modality so that each adapter only ever sees the rows routed to it.
template <typename T>
ag::Var<T> plora_linear(ag::Tape<T>& t, ag::Var<T> x, std::span<const Modality> tags,
                        const AdaptedProjection<T>& proj, T scale) {
  require(static_cast<Eigen::Index>(tags.size()) == x.rows(), ErrorKind::kShape,
          "plora_linear: one modality tag per position required");
  auto y = proj.base(t, x);
  for (Modality m : {Modality::kText, Modality::kEmotion}) {
    const auto& route = m == Modality::kEmotion ? proj.emotion : proj.text;
    if (!route) continue;
    std::vector<int> idx;
    for (std::size_t p = 0; p < tags.size(); ++p) {
      if (tags[p] == m) idx.push_back(static_cast<int>(p));
    }
    if (idx.empty()) continue;
    auto xs = ag::gather_rows(x, idx);
    auto h = ag::linear(xs, t.param(*route->a));
    auto d = ag::scale(ag::linear(h, t.param(*route->b)), scale);
    y = ag::scatter_add_rows(y, idx, d);
  }
  return y;
}

template <typename T>
class PloraLm {
 public:
  PloraLm(ParamStore<T>& store, LmConfig cfg, std::uint64_t seed) : cfg_(cfg) {
    if (cfg_.vocab_size == 0) cfg_.vocab_size = Vocabulary().size();
    require(cfg_.dim % cfg_.heads == 0, ErrorKind::kConfig, "lm: dim must be divisible by heads");
    require(cfg_.rank >= 1, ErrorKind::kConfig, "lm: adapter rank must be >= 1");
    const auto G = ParamGroup::kLmBase;
    const int d = cfg_.dim;
    tok_emb_ = &store.add("lm.tok_emb", G, nn::init_normal<T>(seed, "lm.tok_emb",
                                                              cfg_.vocab_size, d, 1.0));
    pos_emb_ = &store.add("lm.pos_emb", G,
                          nn::sinusoid_positions<T>(cfg_.max_positions, d) * T(0.5));
    const double out_scale = 1.0 / std::sqrt(2.0 * cfg_.blocks);
    for (int l = 0; l < cfg_.blocks; ++l) {
      const std::string n = "lm.block" + std::to_string(l);
      Block b;
      b.ln1 = nn::LayerNorm<T>::make(store, n + ".ln1", G, d);
      b.q.base = nn::Linear<T>::make(store, n + ".attn.q", G, d, d, true, seed);
      b.k = nn::Linear<T>::make(store, n + ".attn.k", G, d, d, false, seed);
      b.v.base = nn::Linear<T>::make(store, n + ".attn.v", G, d, d, true, seed);
      b.o = nn::Linear<T>::make(store, n + ".attn.o", G, d, d, true, seed,
                                out_scale / std::sqrt(static_cast<double>(d)));
      b.ff = nn::FeedForwardSublayer<T>::make(store, n + ".ff", G, d, seed, out_scale);
      attach_adapters(store, n + ".attn.q", b.q, seed);
      attach_adapters(store, n + ".attn.v", b.v, seed);
      blocks_.push_back(std::move(b));
    }
    ln_f_ = nn::LayerNorm<T>::make(store, "lm.ln_f", G, d);
    head_ = nn::Linear<T>::make(store, "lm.head", G, d, cfg_.vocab_size, false, seed);
  }

  const LmConfig& config() const { return cfg_; }
  int dim() const { return cfg_.dim; }

  Param<T>& token_embedding() { return *tok_emb_; }

  ag::Var<T> embed_tokens(ag::Tape<T>& t, const std::vector<int>& ids) const {
    return ag::gather_rows(t.param(*tok_emb_), ids);
  }

  // Logits for every position, causal.
  ag::Var<T> forward(ag::Tape<T>& t, ag::Var<T> embeddings,
                     std::span<const Modality> tags) const {
    const auto n = embeddings.rows();
    require(n <= cfg_.max_positions, ErrorKind::kOverflow,
            "lm_forward: sequence of " + std::to_string(n) + " positions exceeds max_positions " +
                std::to_string(cfg_.max_positions));
    require(embeddings.cols() == cfg_.dim, ErrorKind::kShape,
            "lm_forward: embedding width mismatch");
    require(static_cast<Eigen::Index>(tags.size()) == n, ErrorKind::kShape,
            "lm_forward: modality tags length mismatch");
    const T s = static_cast<T>(cfg_.scale);
    auto x = ag::add(embeddings, ag::slice_rows(t.param(*pos_emb_), 0, n));
    for (const auto& b : blocks_) {
      auto h = b.ln1(t, x);
      auto q = plora_linear(t, h, tags, b.q, s);
      auto k = b.k(t, h);
      auto v = plora_linear(t, h, tags, b.v, s);
      auto a = ag::attention(q, k, v, cfg_.heads, ag::AttentionMask{true, nullptr});
      x = ag::add(x, b.o(t, a));
      x = b.ff(t, x);
    }
    return head_(t, ln_f_(t, x));
  }

  // Every adapter pair, tagged with the route(s) it serves.
  std::vector<AdapterPair<T>> adapters(Modality m) const {
    std::vector<AdapterPair<T>> out;
    for (const auto& b : blocks_) {
      for (const auto* p : {&b.q, &b.v}) {
        const auto& r = m == Modality::kEmotion ? p->emotion : p->text;
        if (r) out.push_back(*r);
      }
    }
    return out;
  }

 private:
  struct Block {
    nn::LayerNorm<T> ln1;
    AdaptedProjection<T> q, v;
    nn::Linear<T> k, o;
    nn::FeedForwardSublayer<T> ff;
  };

  AdapterPair<T> make_pair(ParamStore<T>& store, const std::string& name, ParamGroup g,
                           std::uint64_t seed) {
    const int d = cfg_.dim, r = cfg_.rank;
    AdapterPair<T> p;
    p.a = &store.add(name + ".A", g, nn::init_normal<T>(seed, name + ".A", r, d,
                                                        cfg_.adapter_init_std));
    p.b = &store.add(name + ".B", g, Mat<T>::Zero(d, r));
    return p;
  }

  void attach_adapters(ParamStore<T>& store, const std::string& name, AdaptedProjection<T>& proj,
                       std::uint64_t seed) {
    switch (cfg_.plora_mode) {
      case PloraMode::kMultiple:
        proj.emotion = make_pair(store, name + ".plora_e", ParamGroup::kPloraE, seed);
        proj.text = make_pair(store, name + ".plora_t", ParamGroup::kPloraT, seed);
        break;
      case PloraMode::kSingleLora: {
        auto shared = make_pair(store, name + ".lora", ParamGroup::kLoraShared, seed);
        proj.emotion = shared;
        proj.text = shared;
        break;
      }
      case PloraMode::kNone:
        break;
    }
  }

  LmConfig cfg_;
  Param<T>* tok_emb_ = nullptr;
  Param<T>* pos_emb_ = nullptr;
  std::vector<Block> blocks_;
  nn::LayerNorm<T> ln_f_;
  nn::Linear<T> head_;
};

// Mean next-token cross-entropy. `loss_mask[p]` marks answer tokens at input
// positions; token p is predicted from the logits of row p - 1.
template <typename T>
ag::Var<T> lm_loss(ag::Var<T> logits, const std::vector<int>& tokens, const Mask& loss_mask,
                   int* positions = nullptr) {
  const auto n = logits.rows();
  require(static_cast<Eigen::Index>(tokens.size()) == n &&
              static_cast<Eigen::Index>(loss_mask.size()) == n,
          ErrorKind::kShape, "lm_loss: tokens/mask length mismatch");
  std::vector<int> targets(static_cast<std::size_t>(n), 0);
  Mask rows(static_cast<std::size_t>(n), 0);
  int count = 0;
  for (Eigen::Index p = 1; p < n; ++p) {
    if (!loss_mask[static_cast<std::size_t>(p)]) continue;
    targets[static_cast<std::size_t>(p - 1)] = tokens[static_cast<std::size_t>(p)];
    rows[static_cast<std::size_t>(p - 1)] = 1;
    ++count;
  }
  require(count > 0, ErrorKind::kShape, "lm_loss: loss mask selects no positions");
  if (positions) *positions = count;
  return ag::cross_entropy(logits, targets, rows);
}

struct GenerationResult {
  bool parsed = false;
  Emotion emotion = Emotion::kNeutral;
  Intensity intensity = Intensity::kMedium;
  std::vector<int> raw_ids;
};

// Greedy decoding after a fixed context until the terminator or the token
// budget; the output must match the answer template exactly to count as parsed.
template <typename T>
GenerationResult generate_answer(const PloraLm<T>& lm, const Mat<T>& context_embeddings,
                                 const std::vector<Modality>& context_tags,
                                 const AnswerSchema& schema) {
  require(context_embeddings.rows() >= 1 &&
              static_cast<Eigen::Index>(context_tags.size()) == context_embeddings.rows(),
          ErrorKind::kShape, "generate_answer: malformed context");
  GenerationResult r;
  std::vector<int> generated;
  for (int step = 0; step < AnswerSchema::kMaxAnswerTokens; ++step) {
    ag::Tape<T> t(false);
    auto ctx = t.constant(context_embeddings);
    std::vector<Modality> tags = context_tags;
    ag::Var<T> emb = ctx;
    if (!generated.empty()) {
      emb = ag::concat_rows(std::vector<ag::Var<T>>{ctx, lm.embed_tokens(t, generated)});
      tags.insert(tags.end(), generated.size(), Modality::kText);
    }
    auto logits = lm.forward(t, emb, tags);
    Eigen::Index best = 0;
    logits.value().row(logits.rows() - 1).maxCoeff(&best);
    generated.push_back(static_cast<int>(best));
    if (best == Vocabulary::kEos) break;
  }
  r.raw_ids = generated;
  if (auto p = schema.parse(generated)) {
    r.parsed = true;
    r.emotion = p->emotion;
    r.intensity = p->intensity;
  }
  return r;
}

}  // namespace jelly
