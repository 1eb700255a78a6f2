// Copyright 2026 The jelly-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "jelly/autograd.hpp"

namespace jelly::nn {

using ag::Tape;
using ag::Var;

// Every tensor is initialized from its own stream derived from (seed, name),
// so a tensor's initial value does not depend on which others exist.
template <typename T>
Mat<T> init_normal(std::uint64_t seed, const std::string& name, Eigen::Index rows,
                   Eigen::Index cols, double stddev) {
  Rng rng(derive_seed(seed, name));
  return random_normal<T>(rows, cols, stddev, rng);
}

template <typename T>
struct Linear {
  Param<T>* weight = nullptr;  // out x in
  Param<T>* bias = nullptr;    // 1 x out, optional

  static Linear make(ParamStore<T>& store, const std::string& name, ParamGroup group,
                     int in, int out, bool with_bias, std::uint64_t seed,
                     double stddev = -1.0) {
    Linear l;
    const double sd = stddev > 0 ? stddev : 1.0 / std::sqrt(static_cast<double>(in));
    l.weight = &store.add(name + ".w", group, init_normal<T>(seed, name + ".w", out, in, sd));
    if (with_bias) l.bias = &store.add(name + ".b", group, Mat<T>::Zero(1, out));
    return l;
  }

  Var<T> operator()(Tape<T>& t, Var<T> x) const {
    auto w = t.param(*weight);
    if (bias) {
      auto b = t.param(*bias);
      return ag::linear(x, w, &b);
    }
    return ag::linear(x, w);
  }

  int in() const { return static_cast<int>(weight->value.cols()); }
  int out() const { return static_cast<int>(weight->value.rows()); }
};

template <typename T>
struct LayerNorm {
  Param<T>* gamma = nullptr;
  Param<T>* beta = nullptr;

  static LayerNorm make(ParamStore<T>& store, const std::string& name, ParamGroup group,
                        int dim) {
    LayerNorm n;
    n.gamma = &store.add(name + ".g", group, Mat<T>::Ones(1, dim));
    n.beta = &store.add(name + ".b", group, Mat<T>::Zero(1, dim));
    return n;
  }

  Var<T> operator()(Tape<T>& t, Var<T> x) const {
    return ag::layer_norm(x, t.param(*gamma), t.param(*beta));
  }
};

template <typename T>
struct Mlp {
  Linear<T> fc1, fc2;

  static Mlp make(ParamStore<T>& store, const std::string& name, ParamGroup group, int dim,
                  int hidden, std::uint64_t seed, double out_scale = 1.0) {
    Mlp m;
    m.fc1 = Linear<T>::make(store, name + ".fc1", group, dim, hidden, true, seed);
    m.fc2 = Linear<T>::make(store, name + ".fc2", group, hidden, dim, true, seed,
                            out_scale / std::sqrt(static_cast<double>(hidden)));
    return m;
  }

  Var<T> operator()(Tape<T>& t, Var<T> x) const { return fc2(t, ag::gelu(fc1(t, x))); }
};

// Pre-norm attention sublayer with residual: x + Wo * Attn(LN(x), ...).
// Cross-attention normalizes the memory with its own LayerNorm.
template <typename T>
struct AttentionSublayer {
  LayerNorm<T> ln_q, ln_kv;
  Linear<T> wq, wk, wv, wo;
  int heads = 1;
  bool cross = false;

  static AttentionSublayer make(ParamStore<T>& store, const std::string& name,
                                ParamGroup group, int dim, int heads, std::uint64_t seed,
                                int memory_dim = 0, double out_scale = 1.0) {
    AttentionSublayer a;
    a.heads = heads;
    a.cross = memory_dim > 0;
    const int kv_dim = a.cross ? memory_dim : dim;
    a.ln_q = LayerNorm<T>::make(store, name + ".ln", group, dim);
    if (a.cross) a.ln_kv = LayerNorm<T>::make(store, name + ".ln_kv", group, kv_dim);
    a.wq = Linear<T>::make(store, name + ".q", group, dim, dim, true, seed);
    a.wk = Linear<T>::make(store, name + ".k", group, kv_dim, dim, false, seed);
    a.wv = Linear<T>::make(store, name + ".v", group, kv_dim, dim, true, seed);
    a.wo = Linear<T>::make(store, name + ".o", group, dim, dim, true, seed,
                           out_scale / std::sqrt(static_cast<double>(dim)));
    return a;
  }

  Var<T> operator()(Tape<T>& t, Var<T> x, ag::AttentionMask mask) const {
    auto h = ln_q(t, x);
    return ag::add(x, wo(t, ag::attention(wq(t, h), wk(t, h), wv(t, h), heads, mask)));
  }

  Var<T> operator()(Tape<T>& t, Var<T> x, Var<T> memory, ag::AttentionMask mask) const {
    auto h = ln_q(t, x);
    auto m = ln_kv(t, memory);
    return ag::add(x, wo(t, ag::attention(wq(t, h), wk(t, m), wv(t, m), heads, mask)));
  }
};

// Pre-norm feed-forward sublayer with residual.
template <typename T>
struct FeedForwardSublayer {
  LayerNorm<T> ln;
  Mlp<T> mlp;

  static FeedForwardSublayer make(ParamStore<T>& store, const std::string& name,
                                  ParamGroup group, int dim, std::uint64_t seed,
                                  double out_scale = 1.0) {
    FeedForwardSublayer f;
    f.ln = LayerNorm<T>::make(store, name + ".ln", group, dim);
    f.mlp = Mlp<T>::make(store, name, group, dim, 2 * dim, seed, out_scale);
    return f;
  }

  Var<T> operator()(Tape<T>& t, Var<T> x) const { return ag::add(x, mlp(t, ln(t, x))); }
};

// Pre-norm transformer block: self-attention then feed-forward.
template <typename T>
struct SelfAttentionBlock {
  AttentionSublayer<T> attn;
  FeedForwardSublayer<T> ff;

  static SelfAttentionBlock make(ParamStore<T>& store, const std::string& name,
                                 ParamGroup group, int dim, int heads, std::uint64_t seed,
                                 double out_scale = 1.0) {
    SelfAttentionBlock b;
    b.attn = AttentionSublayer<T>::make(store, name + ".attn", group, dim, heads, seed, 0,
                                        out_scale);
    b.ff = FeedForwardSublayer<T>::make(store, name + ".ff", group, dim, seed, out_scale);
    return b;
  }

  Var<T> operator()(Tape<T>& t, Var<T> x, ag::AttentionMask mask) const {
    return ff(t, attn(t, x, mask));
  }
};

// Sinusoidal position table, rows = positions.
template <typename T>
Mat<T> sinusoid_positions(Eigen::Index n, Eigen::Index dim) {
  Mat<T> p(n, dim);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < dim; ++j) {
      const double rate =
          std::pow(10000.0, -static_cast<double>(2 * (j / 2)) / static_cast<double>(dim));
      p(i, j) = static_cast<T>(j % 2 == 0 ? std::sin(i * rate) : std::cos(i * rate));
    }
  }
  return p;
}

}  // namespace jelly::nn
