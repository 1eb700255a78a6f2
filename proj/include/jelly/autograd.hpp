// Copyright 2026 The jelly-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Reverse-mode differentiation over dense row-major matrices.
//
// A Tape records every operation of one forward pass. Parameters enter as
// leaves whose gradients accumulate straight into Param::grad; a parameter
// used several times is recorded once. Nodes that do not depend on any
// trainable leaf are never visited by backward().

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <unordered_map>
#include <utility>
#include <vector>

#include "jelly/param.hpp"

namespace jelly::ag {

template <typename T>
class Tape;

template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  int id = -1;

  const Mat<T>& value() const { return tape->value(id); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool valid() const { return tape != nullptr && id >= 0; }
};

template <typename T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, int)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {
    nodes_.reserve(1024);
  }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var<T> constant(Mat<T> v) {
    Node n;
    n.value = std::move(v);
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size()) - 1};
  }

  Var<T> param(Param<T>& p) {
    auto it = param_nodes_.find(&p);
    if (it != param_nodes_.end()) return {this, it->second};
    Node n;
    n.ref = &p.value;
    n.requires_grad = grad_enabled_ && p.trainable;
    if (n.requires_grad) n.grad_ref = &p.grad;
    nodes_.push_back(std::move(n));
    const int id = static_cast<int>(nodes_.size()) - 1;
    param_nodes_[&p] = id;
    return {this, id};
  }

  // Records an op result. `backward` is dropped when no input needs grad.
  Var<T> push(Mat<T> value, bool requires_grad, Backward backward) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = grad_enabled_ && requires_grad;
    if (n.requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size()) - 1};
  }

  const Mat<T>& value(int id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    return n.ref ? *n.ref : n.value;
  }

  bool needs_grad(int id) const {
    return nodes_[static_cast<std::size_t>(id)].requires_grad;
  }

  // Gradient buffer for `id`, zero-initialized on first touch.
  Mat<T>& grad(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad_ref) return *n.grad_ref;
    if (n.grad.size() == 0) {
      const auto& v = value(id);
      n.grad = Mat<T>::Zero(v.rows(), v.cols());
    }
    return n.grad;
  }

  bool has_grad(int id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    return n.grad_ref != nullptr || n.grad.size() != 0;
  }

  // Seeds d(out)/d(out) = 1 (or `seed`) and propagates to all trainable leaves.
  void backward(Var<T> out, T seed = T(1)) {
    require(out.rows() == 1 && out.cols() == 1, ErrorKind::kShape,
            "backward() expects a scalar output");
    if (!needs_grad(out.id)) return;
    grad(out.id)(0, 0) += seed;
    for (int id = out.id; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (!n.requires_grad || !n.backward || n.grad.size() == 0) continue;
      n.backward(*this, id);
      n.grad.resize(0, 0);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat<T> value;
    const Mat<T>* ref = nullptr;
    Mat<T> grad;
    Mat<T>* grad_ref = nullptr;
    bool requires_grad = false;
    Backward backward;
  };

  bool grad_enabled_;
  std::vector<Node> nodes_;
  std::unordered_map<const Param<T>*, int> param_nodes_;
};

namespace detail {
template <typename T>
bool any_needs(Tape<T>& t, std::initializer_list<int> ids) {
  for (int id : ids) {
    if (t.needs_grad(id)) return true;
  }
  return false;
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and shape ops

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  auto& t = *a.tape;
  require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorKind::kShape,
          "add: shape mismatch");
  Mat<T> y = a.value() + b.value();
  const int ia = a.id, ib = b.id;
  return t.push(std::move(y), detail::any_needs(t, {ia, ib}),
                [ia, ib](Tape<T>& tp, int self) {
                  const Mat<T>& g = tp.grad(self);
                  if (tp.needs_grad(ia)) tp.grad(ia) += g;
                  if (tp.needs_grad(ib)) tp.grad(ib) += g;
                });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  auto& t = *a.tape;
  require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorKind::kShape,
          "sub: shape mismatch");
  Mat<T> y = a.value() - b.value();
  const int ia = a.id, ib = b.id;
  return t.push(std::move(y), detail::any_needs(t, {ia, ib}),
                [ia, ib](Tape<T>& tp, int self) {
                  const Mat<T>& g = tp.grad(self);
                  if (tp.needs_grad(ia)) tp.grad(ia) += g;
                  if (tp.needs_grad(ib)) tp.grad(ib) -= g;
                });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  auto& t = *a.tape;
  require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorKind::kShape,
          "mul: shape mismatch");
  Mat<T> y = a.value().cwiseProduct(b.value());
  const int ia = a.id, ib = b.id;
  return t.push(std::move(y), detail::any_needs(t, {ia, ib}),
                [ia, ib](Tape<T>& tp, int self) {
                  const Mat<T>& g = tp.grad(self);
                  if (tp.needs_grad(ia)) tp.grad(ia) += g.cwiseProduct(tp.value(ib));
                  if (tp.needs_grad(ib)) tp.grad(ib) += g.cwiseProduct(tp.value(ia));
                });
}

template <typename T>
Var<T> scale(Var<T> a, T s) {
  auto& t = *a.tape;
  Mat<T> y = a.value() * s;
  const int ia = a.id;
  return t.push(std::move(y), t.needs_grad(ia), [ia, s](Tape<T>& tp, int self) {
    tp.grad(ia) += tp.grad(self) * s;
  });
}

// x (n x d) + r (1 x d) broadcast over rows.
template <typename T>
Var<T> add_row(Var<T> x, Var<T> r) {
  auto& t = *x.tape;
  require(r.rows() == 1 && r.cols() == x.cols(), ErrorKind::kShape,
          "add_row: expected 1 x d row");
  Mat<T> y = x.value();
  y.rowwise() += r.value().row(0);
  const int ix = x.id, ir = r.id;
  return t.push(std::move(y), detail::any_needs(t, {ix, ir}),
                [ix, ir](Tape<T>& tp, int self) {
                  const Mat<T>& g = tp.grad(self);
                  if (tp.needs_grad(ix)) tp.grad(ix) += g;
                  if (tp.needs_grad(ir)) tp.grad(ir) += g.colwise().sum();
                });
}

template <typename T>
Var<T> transpose(Var<T> x) {
  auto& t = *x.tape;
  Mat<T> y = x.value().transpose();
  const int ix = x.id;
  return t.push(std::move(y), t.needs_grad(ix), [ix](Tape<T>& tp, int self) {
    tp.grad(ix) += tp.grad(self).transpose();
  });
}

template <typename T>
Var<T> gelu(Var<T> x) {
  auto& t = *x.tape;
  static constexpr T kC = T(0.7978845608028654);  // sqrt(2/pi)
  static constexpr T kA = T(0.044715);
  const auto xa = x.value().array();
  Mat<T> th = (kC * (xa + kA * xa.cube())).tanh().matrix();
  Mat<T> y = (T(0.5) * xa * (T(1) + th.array())).matrix();
  const int ix = x.id;
  if (!t.needs_grad(ix)) return t.push(std::move(y), false, nullptr);
  return t.push(std::move(y), true, [ix, th = std::move(th)](Tape<T>& tp, int self) {
    const auto v = tp.value(ix).array();
    const auto h = th.array();
    const auto du = kC * (T(1) + T(3) * kA * v.square());
    tp.grad(ix).array() +=
        tp.grad(self).array() * (T(0.5) * (T(1) + h) + T(0.5) * v * (T(1) - h.square()) * du);
  });
}

template <typename T>
Var<T> tanh(Var<T> x) {
  auto& t = *x.tape;
  Mat<T> y = x.value().array().tanh().matrix();
  const int ix = x.id;
  const int iy = static_cast<int>(t.size());
  return t.push(std::move(y), t.needs_grad(ix), [ix, iy](Tape<T>& tp, int self) {
    const Mat<T>& yv = tp.value(iy);
    tp.grad(ix).array() +=
        tp.grad(self).array() * (T(1) - yv.array().square());
  });
}

// Rows [start, start + count).
template <typename T>
Var<T> slice_rows(Var<T> x, Eigen::Index start, Eigen::Index count) {
  auto& t = *x.tape;
  require(start >= 0 && count >= 0 && start + count <= x.rows(),
          ErrorKind::kShape, "slice_rows: range out of bounds");
  Mat<T> y = x.value().middleRows(start, count);
  const int ix = x.id;
  return t.push(std::move(y), t.needs_grad(ix),
                [ix, start, count](Tape<T>& tp, int self) {
                  tp.grad(ix).middleRows(start, count) += tp.grad(self);
                });
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  require(!parts.empty(), ErrorKind::kShape, "concat_rows: no inputs");
  auto& t = *parts.front().tape;
  Eigen::Index rows = 0;
  const Eigen::Index cols = parts.front().cols();
  bool req = false;
  std::vector<int> ids;
  ids.reserve(parts.size());
  for (const auto& p : parts) {
    require(p.cols() == cols, ErrorKind::kShape, "concat_rows: width mismatch");
    rows += p.rows();
    req = req || t.needs_grad(p.id);
    ids.push_back(p.id);
  }
  Mat<T> y(rows, cols);
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    y.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  return t.push(std::move(y), req, [ids](Tape<T>& tp, int self) {
    const Mat<T>& g = tp.grad(self);
    Eigen::Index r = 0;
    for (int id : ids) {
      const Eigen::Index n = tp.value(id).rows();
      if (tp.needs_grad(id)) tp.grad(id) += g.middleRows(r, n);
      r += n;
    }
  });
}

// Embedding lookup: row ids[i] of table.
template <typename T>
Var<T> gather_rows(Var<T> table, std::vector<int> ids) {
  auto& t = *table.tape;
  const Mat<T>& tv = table.value();
  Mat<T> y(static_cast<Eigen::Index>(ids.size()), tv.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] >= 0 && ids[i] < tv.rows(), ErrorKind::kDomain,
            "gather_rows: id " + std::to_string(ids[i]) + " out of range");
    y.row(static_cast<Eigen::Index>(i)) = tv.row(ids[i]);
  }
  const int it = table.id;
  return t.push(std::move(y), t.needs_grad(it),
                [it, ids = std::move(ids)](Tape<T>& tp, int self) {
                  const Mat<T>& g = tp.grad(self);
                  Mat<T>& gt = tp.grad(it);
                  for (std::size_t i = 0; i < ids.size(); ++i) {
                    gt.row(ids[i]) += g.row(static_cast<Eigen::Index>(i));
                  }
                });
}

// out = base; out.row(idx[i]) += delta.row(i).
template <typename T>
Var<T> scatter_add_rows(Var<T> base, const std::vector<int>& idx, Var<T> delta) {
  auto& t = *base.tape;
  require(delta.rows() == static_cast<Eigen::Index>(idx.size()) &&
              delta.cols() == base.cols(),
          ErrorKind::kShape, "scatter_add_rows: shape mismatch");
  Mat<T> y = base.value();
  const Mat<T>& dv = delta.value();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    y.row(idx[i]) += dv.row(static_cast<Eigen::Index>(i));
  }
  const int ib = base.id, id = delta.id;
  return t.push(std::move(y), detail::any_needs(t, {ib, id}),
                [ib, id, idx](Tape<T>& tp, int self) {
                  const Mat<T>& g = tp.grad(self);
                  if (tp.needs_grad(ib)) tp.grad(ib) += g;
                  if (tp.needs_grad(id)) {
                    Mat<T>& gd = tp.grad(id);
                    for (std::size_t i = 0; i < idx.size(); ++i) {
                      gd.row(static_cast<Eigen::Index>(i)) += g.row(idx[i]);
                    }
                  }
                });
}

// Row i of x repeated repeats[i] times (length regulation).
template <typename T>
Var<T> expand_rows(Var<T> x, std::vector<int> repeats) {
  auto& t = *x.tape;
  require(static_cast<Eigen::Index>(repeats.size()) == x.rows(),
          ErrorKind::kShape, "expand_rows: one repeat count per row");
  Eigen::Index total = 0;
  for (int r : repeats) {
    require(r >= 0, ErrorKind::kShape, "expand_rows: negative repeat");
    total += r;
  }
  Mat<T> y(total, x.cols());
  Eigen::Index o = 0;
  for (std::size_t i = 0; i < repeats.size(); ++i) {
    for (int k = 0; k < repeats[i]; ++k) {
      y.row(o++) = x.value().row(static_cast<Eigen::Index>(i));
    }
  }
  const int ix = x.id;
  return t.push(std::move(y), t.needs_grad(ix),
                [ix, repeats = std::move(repeats)](Tape<T>& tp, int self) {
                  const Mat<T>& g = tp.grad(self);
                  Mat<T>& gx = tp.grad(ix);
                  Eigen::Index o = 0;
                  for (std::size_t i = 0; i < repeats.size(); ++i) {
                    for (int k = 0; k < repeats[i]; ++k) {
                      gx.row(static_cast<Eigen::Index>(i)) += g.row(o++);
                    }
                  }
                });
}

// ---------------------------------------------------------------------------
// Linear algebra

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  auto& t = *a.tape;
  require(a.cols() == b.rows(), ErrorKind::kShape, "matmul: inner dim mismatch");
  Mat<T> y;
  y.noalias() = a.value() * b.value();
  const int ia = a.id, ib = b.id;
  return t.push(std::move(y), detail::any_needs(t, {ia, ib}),
                [ia, ib](Tape<T>& tp, int self) {
                  const Mat<T>& g = tp.grad(self);
                  if (tp.needs_grad(ia))
                    tp.grad(ia).noalias() += g * tp.value(ib).transpose();
                  if (tp.needs_grad(ib))
                    tp.grad(ib).noalias() += tp.value(ia).transpose() * g;
                });
}

// y = x W^T (+ b); W is out x in, b is 1 x out.
template <typename T>
Var<T> linear(Var<T> x, Var<T> w, const Var<T>* b = nullptr) {
  auto& t = *x.tape;
  require(x.cols() == w.cols(), ErrorKind::kShape,
          "linear: input width " + std::to_string(x.cols()) +
              " != weight in-dim " + std::to_string(w.cols()));
  Mat<T> y;
  y.noalias() = x.value() * w.value().transpose();
  int ib = -1;
  if (b) {
    require(b->rows() == 1 && b->cols() == w.rows(), ErrorKind::kShape,
            "linear: bias shape");
    y.rowwise() += b->value().row(0);
    ib = b->id;
  }
  const int ix = x.id, iw = w.id;
  const bool req = detail::any_needs(t, {ix, iw}) || (ib >= 0 && t.needs_grad(ib));
  return t.push(std::move(y), req, [ix, iw, ib](Tape<T>& tp, int self) {
    const Mat<T>& g = tp.grad(self);
    if (tp.needs_grad(ix)) tp.grad(ix).noalias() += g * tp.value(iw);
    if (tp.needs_grad(iw)) tp.grad(iw).noalias() += g.transpose() * tp.value(ix);
    if (ib >= 0 && tp.needs_grad(ib)) tp.grad(ib) += g.colwise().sum();
  });
}

// ---------------------------------------------------------------------------
// Normalization, pooling, attention

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-5)) {
  auto& t = *x.tape;
  const Mat<T>& xv = x.value();
  const Eigen::Index n = xv.rows(), d = xv.cols();
  require(gamma.cols() == d && beta.cols() == d, ErrorKind::kShape,
          "layer_norm: parameter width");
  Mat<T> xhat(n, d);
  std::vector<T> inv_std(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const T mean = xv.row(i).mean();
    const T var = (xv.row(i).array() - mean).square().mean();
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(i)] = is;
    xhat.row(i) = (xv.row(i).array() - mean) * is;
  }
  Mat<T> y = xhat;
  y.array().rowwise() *= gamma.value().row(0).array();
  y.rowwise() += beta.value().row(0);
  const int ix = x.id, ig = gamma.id, ib = beta.id;
  return t.push(
      std::move(y), detail::any_needs(t, {ix, ig, ib}),
      [ix, ig, ib, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          Tape<T>& tp, int self) {
        const Mat<T>& g = tp.grad(self);
        if (tp.needs_grad(ig))
          tp.grad(ig) += (g.array() * xhat.array()).colwise().sum().matrix();
        if (tp.needs_grad(ib)) tp.grad(ib) += g.colwise().sum();
        if (tp.needs_grad(ix)) {
          Mat<T> gh = g;
          gh.array().rowwise() *= tp.value(ig).row(0).array();
          Mat<T>& gx = tp.grad(ix);
          const T d = static_cast<T>(gh.cols());
          for (Eigen::Index i = 0; i < gh.rows(); ++i) {
            const T m1 = gh.row(i).sum() / d;
            const T m2 = gh.row(i).dot(xhat.row(i)) / d;
            gx.row(i).array() += inv_std[static_cast<std::size_t>(i)] *
                                 (gh.row(i).array() - m1 - xhat.row(i).array() * m2);
          }
        }
      });
}

// Mean over rows with mask[i] != 0 -> 1 x d.
template <typename T>
Var<T> masked_mean_rows(Var<T> x, const Mask& mask) {
  auto& t = *x.tape;
  require(static_cast<Eigen::Index>(mask.size()) == x.rows(), ErrorKind::kShape,
          "masked_mean_rows: mask length");
  const auto count = std::count_if(mask.begin(), mask.end(),
                                   [](std::uint8_t m) { return m != 0; });
  require(count > 0, ErrorKind::kShape, "masked_mean_rows: nothing unmasked");
  Mat<T> y = Mat<T>::Zero(1, x.cols());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) y.row(0) += x.value().row(static_cast<Eigen::Index>(i));
  }
  const T inv = T(1) / static_cast<T>(count);
  y *= inv;
  const int ix = x.id;
  return t.push(std::move(y), t.needs_grad(ix),
                [ix, mask, inv](Tape<T>& tp, int self) {
                  const Mat<T>& g = tp.grad(self);
                  Mat<T>& gx = tp.grad(ix);
                  for (std::size_t i = 0; i < mask.size(); ++i) {
                    if (mask[i]) gx.row(static_cast<Eigen::Index>(i)) += g.row(0) * inv;
                  }
                });
}

// Softmax over all entries of a vector-shaped input.
template <typename T>
Var<T> softmax_all(Var<T> x) {
  auto& t = *x.tape;
  const Mat<T>& xv = x.value();
  const T mx = xv.maxCoeff();
  Mat<T> y = (xv.array() - mx).exp().matrix();
  y /= y.sum();
  const int ix = x.id;
  const int iy = static_cast<int>(t.size());
  return t.push(std::move(y), t.needs_grad(ix), [ix, iy](Tape<T>& tp, int self) {
    const Mat<T>& p = tp.value(iy);
    const Mat<T>& g = tp.grad(self);
    const T dot = (g.array() * p.array()).sum();
    tp.grad(ix).array() += p.array() * (g.array() - dot);
  });
}

// sum_l w_l * xs[l], w is a vector with xs.size() entries.
template <typename T>
Var<T> weighted_sum(const std::vector<Var<T>>& xs, Var<T> w) {
  require(!xs.empty() && static_cast<std::size_t>(w.value().size()) == xs.size(),
          ErrorKind::kShape, "weighted_sum: one weight per input");
  auto& t = *w.tape;
  Mat<T> y = xs.front().value() * w.value().data()[0];
  bool req = t.needs_grad(w.id);
  std::vector<int> ids{xs.front().id};
  req = req || t.needs_grad(xs.front().id);
  for (std::size_t l = 1; l < xs.size(); ++l) {
    require(xs[l].rows() == y.rows() && xs[l].cols() == y.cols(), ErrorKind::kShape,
            "weighted_sum: shape mismatch");
    y.noalias() += xs[l].value() * w.value().data()[l];
    ids.push_back(xs[l].id);
    req = req || t.needs_grad(xs[l].id);
  }
  const int iw = w.id;
  return t.push(std::move(y), req, [ids, iw](Tape<T>& tp, int self) {
    const Mat<T>& g = tp.grad(self);
    const Mat<T>& wv = tp.value(iw);
    for (std::size_t l = 0; l < ids.size(); ++l) {
      if (tp.needs_grad(ids[l])) tp.grad(ids[l]) += g * wv.data()[l];
    }
    if (tp.needs_grad(iw)) {
      Mat<T>& gw = tp.grad(iw);
      for (std::size_t l = 0; l < ids.size(); ++l) {
        gw.data()[l] += (g.array() * tp.value(ids[l]).array()).sum();
      }
    }
  });
}

struct AttentionMask {
  bool causal = false;
  const Mask* key_valid = nullptr;  // nullptr: every key valid
};

// Multi-head scaled dot-product attention on pre-projected q (n x d),
// k and v (m x d). Keys that are masked receive exactly zero weight.
template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, int heads, AttentionMask mask) {
  auto& t = *q.tape;
  const Eigen::Index n = q.rows(), m = k.rows(), d = q.cols();
  require(k.cols() == d && v.cols() == d && v.rows() == m, ErrorKind::kShape,
          "attention: q/k/v shape mismatch");
  require(heads >= 1 && d % heads == 0, ErrorKind::kShape,
          "attention: width not divisible by heads");
  if (mask.causal) {
    require(n == m, ErrorKind::kShape, "attention: causal mask needs n == m");
  }
  Mask key_valid(static_cast<std::size_t>(m), 1);
  if (mask.key_valid) {
    require(static_cast<Eigen::Index>(mask.key_valid->size()) == m,
            ErrorKind::kShape, "attention: key mask length");
    key_valid = *mask.key_valid;
  }
  const Eigen::Index dh = d / heads;
  const T sc = T(1) / std::sqrt(static_cast<T>(dh));
  const Mat<T>& qv = q.value();
  const Mat<T>& kv = k.value();
  const Mat<T>& vv = v.value();
  std::vector<Mat<T>> probs(static_cast<std::size_t>(heads));
  Mat<T> y(n, d);
  for (int h = 0; h < heads; ++h) {
    Mat<T> s;
    s.noalias() = qv.middleCols(h * dh, dh) * kv.middleCols(h * dh, dh).transpose();
    Mat<T>& p = probs[static_cast<std::size_t>(h)];
    p = Mat<T>::Zero(n, m);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::Index lim = mask.causal ? i + 1 : m;
      T mx = -std::numeric_limits<T>::infinity();
      for (Eigen::Index j = 0; j < lim; ++j) {
        if (key_valid[static_cast<std::size_t>(j)]) mx = std::max(mx, s(i, j) * sc);
      }
      if (!std::isfinite(mx)) continue;  // no attendable key: zero output row
      T z = 0;
      for (Eigen::Index j = 0; j < lim; ++j) {
        if (key_valid[static_cast<std::size_t>(j)]) {
          const T e = std::exp(s(i, j) * sc - mx);
          p(i, j) = e;
          z += e;
        }
      }
      p.row(i).head(lim) /= z;
    }
    y.middleCols(h * dh, dh).noalias() = p * vv.middleCols(h * dh, dh);
  }
  const int iq = q.id, ik = k.id, iv = v.id;
  return t.push(
      std::move(y), detail::any_needs(t, {iq, ik, iv}),
      [iq, ik, iv, heads, dh, sc, probs = std::move(probs)](Tape<T>& tp, int self) {
        const Mat<T>& g = tp.grad(self);
        const Mat<T>& qv = tp.value(iq);
        const Mat<T>& kv = tp.value(ik);
        const Mat<T>& vv = tp.value(iv);
        const bool nq = tp.needs_grad(iq), nk = tp.needs_grad(ik),
                   nv = tp.needs_grad(iv);
        for (int h = 0; h < heads; ++h) {
          const Mat<T>& p = probs[static_cast<std::size_t>(h)];
          const auto gh = g.middleCols(h * dh, dh);
          if (nv) tp.grad(iv).middleCols(h * dh, dh).noalias() += p.transpose() * gh;
          if (!nq && !nk) continue;
          Mat<T> dp;
          dp.noalias() = gh * vv.middleCols(h * dh, dh).transpose();
          Mat<T> ds = p.cwiseProduct(dp);
          const Eigen::Matrix<T, Eigen::Dynamic, 1> rs = ds.rowwise().sum();
          ds -= p.cwiseProduct(rs.replicate(1, p.cols()));
          ds *= sc;
          if (nq) tp.grad(iq).middleCols(h * dh, dh).noalias() += ds * kv.middleCols(h * dh, dh);
          if (nk)
            tp.grad(ik).middleCols(h * dh, dh).noalias() +=
                ds.transpose() * qv.middleCols(h * dh, dh);
        }
      });
}

// ---------------------------------------------------------------------------
// Losses

// Mean cross-entropy over rows with mask[r] != 0; row r of logits predicts
// targets[r]. Returns a 1 x 1 node.
template <typename T>
Var<T> cross_entropy(Var<T> logits, const std::vector<int>& targets,
                     const Mask& mask) {
  auto& t = *logits.tape;
  const Mat<T>& lv = logits.value();
  require(static_cast<Eigen::Index>(targets.size()) == lv.rows() &&
              static_cast<Eigen::Index>(mask.size()) == lv.rows(),
          ErrorKind::kShape, "cross_entropy: targets/mask length");
  std::vector<Eigen::Index> rows;
  for (std::size_t r = 0; r < mask.size(); ++r) {
    if (mask[r]) rows.push_back(static_cast<Eigen::Index>(r));
  }
  require(!rows.empty(), ErrorKind::kShape, "cross_entropy: empty loss mask");
  Mat<T> probs(static_cast<Eigen::Index>(rows.size()), lv.cols());
  T total = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto r = rows[i];
    const int tgt = targets[static_cast<std::size_t>(r)];
    require(tgt >= 0 && tgt < lv.cols(), ErrorKind::kDomain,
            "cross_entropy: target id out of range");
    const T mx = lv.row(r).maxCoeff();
    auto e = (lv.row(r).array() - mx).exp();
    const T z = e.sum();
    probs.row(static_cast<Eigen::Index>(i)) = e / z;
    total += -(lv(r, tgt) - mx - std::log(z));
  }
  const T inv = T(1) / static_cast<T>(rows.size());
  Mat<T> y(1, 1);
  y(0, 0) = total * inv;
  const int il = logits.id;
  return t.push(std::move(y), t.needs_grad(il),
                [il, rows = std::move(rows), probs = std::move(probs), targets,
                 inv](Tape<T>& tp, int self) {
                  const T g = tp.grad(self)(0, 0) * inv;
                  Mat<T>& gl = tp.grad(il);
                  for (std::size_t i = 0; i < rows.size(); ++i) {
                    const auto r = rows[i];
                    gl.row(r) += probs.row(static_cast<Eigen::Index>(i)) * g;
                    gl(r, targets[static_cast<std::size_t>(r)]) -= g;
                  }
                });
}

// Mean squared error against a constant target, over all entries.
template <typename T>
Var<T> mse(Var<T> x, const Mat<T>& target) {
  auto& t = *x.tape;
  require(x.rows() == target.rows() && x.cols() == target.cols(),
          ErrorKind::kShape, "mse: shape mismatch");
  require(target.size() > 0, ErrorKind::kShape, "mse: empty input");
  Mat<T> diff = x.value() - target;
  const T inv = T(1) / static_cast<T>(diff.size());
  Mat<T> y(1, 1);
  y(0, 0) = diff.squaredNorm() * inv;
  const int ix = x.id;
  return t.push(std::move(y), t.needs_grad(ix),
                [ix, diff = std::move(diff), inv](Tape<T>& tp, int self) {
                  tp.grad(ix) += diff * (T(2) * inv * tp.grad(self)(0, 0));
                });
}

template <typename T>
Var<T> sum_all(Var<T> x) {
  auto& t = *x.tape;
  Mat<T> y(1, 1);
  y(0, 0) = x.value().sum();
  const int ix = x.id;
  return t.push(std::move(y), t.needs_grad(ix), [ix](Tape<T>& tp, int self) {
    tp.grad(ix).array() += tp.grad(self)(0, 0);
  });
}

}  // namespace jelly::ag
