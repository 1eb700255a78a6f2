// Copyright 2026 The jelly-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <map>
#include <numbers>
#include <string>

#include "jelly/param.hpp"

namespace jelly {

struct OptimConfig {
  int steps = 1000;
  int warmup_steps = 100;
  double peak_lr = 3e-3;
  double min_lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
  double clip_norm = 1.0;  // <= 0 disables clipping
  int batch_size = 8;

  void validate(const std::string& where) const {
    require(steps >= 1, ErrorKind::kConfig, where + ".steps: must be >= 1");
    require(warmup_steps >= 0 && warmup_steps < steps, ErrorKind::kConfig,
            where + ".warmup_steps: must satisfy 0 <= warmup < steps");
    require(min_lr >= 0 && min_lr <= peak_lr, ErrorKind::kConfig,
            where + ".min_lr: must satisfy 0 <= min_lr <= peak_lr");
    require(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1, ErrorKind::kConfig,
            where + ".beta1/beta2: must lie in [0, 1)");
    require(batch_size >= 1, ErrorKind::kConfig, where + ".batch_size: must be >= 1");
  }
};

// Linear warmup 0 -> peak over [0, warmup], cosine peak -> min over
// [warmup, steps], then min.
inline double lr_at(long step, const OptimConfig& c) {
  require(step >= 0, ErrorKind::kDomain, "lr_at: negative step");
  if (step < c.warmup_steps) {
    return c.peak_lr * static_cast<double>(step) / static_cast<double>(c.warmup_steps);
  }
  if (step >= c.steps) return c.min_lr;
  const double span = static_cast<double>(c.steps - c.warmup_steps);
  const double progress = static_cast<double>(step - c.warmup_steps) / span;
  return c.min_lr + 0.5 * (c.peak_lr - c.min_lr) * (1.0 + std::cos(std::numbers::pi * progress));
}

// Decoupled weight decay Adam over the trainable parameters of a store.
// Moment estimates are keyed by parameter name so they survive checkpoints.
template <typename T>
class AdamW {
 public:
  explicit AdamW(OptimConfig cfg) : cfg_(cfg) {}

  const OptimConfig& config() const { return cfg_; }
  long step() const { return step_; }
  void set_step(long s) { step_ = s; }

  std::map<std::string, Mat<T>>& first_moments() { return m_; }
  std::map<std::string, Mat<T>>& second_moments() { return v_; }
  const std::map<std::string, Mat<T>>& first_moments() const { return m_; }
  const std::map<std::string, Mat<T>>& second_moments() const { return v_; }

  // Scales every trainable gradient so the global norm is at most clip_norm;
  // returns the norm before clipping.
  double clip(ParamStore<T>& store) const {
    double sq = 0.0;
    for (auto* p : store.trainable()) sq += p->grad.template cast<double>().squaredNorm();
    const double norm = std::sqrt(sq);
    if (cfg_.clip_norm > 0 && norm > cfg_.clip_norm) {
      const T f = static_cast<T>(cfg_.clip_norm / norm);
      for (auto* p : store.trainable()) p->grad *= f;
    }
    return norm;
  }

  // One update at lr_at(step); increments the step counter.
  double update(ParamStore<T>& store) {
    const double lr = lr_at(step_, cfg_);
    const long t = step_ + 1;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t));
    const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
    for (auto* p : store.trainable()) {
      auto& m = moment(m_, *p);
      auto& v = moment(v_, *p);
      m = b1 * m + (T(1) - b1) * p->grad;
      v = b2 * v + (T(1) - b2) * p->grad.cwiseAbs2();
      const T step_size = static_cast<T>(lr / bc1);
      const T denom_scale = static_cast<T>(1.0 / std::sqrt(bc2));
      if (cfg_.weight_decay > 0) p->value *= static_cast<T>(1.0 - lr * cfg_.weight_decay);
      p->value.array() -= step_size * m.array() /
                          (v.array().sqrt() * denom_scale + static_cast<T>(cfg_.eps));
    }
    step_ = t;
    return lr;
  }

 private:
  static Mat<T>& moment(std::map<std::string, Mat<T>>& table, const Param<T>& p) {
    auto it = table.find(p.name);
    if (it == table.end()) {
      it = table.emplace(p.name, Mat<T>::Zero(p.value.rows(), p.value.cols())).first;
    }
    return it->second;
  }

  OptimConfig cfg_;
  long step_ = 0;
  std::map<std::string, Mat<T>> m_, v_;
};

}  // namespace jelly
