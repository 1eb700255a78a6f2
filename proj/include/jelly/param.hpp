// Copyright 2026 The jelly-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <memory>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "jelly/tensor.hpp"

namespace jelly {

// Parameter groups are the unit of the per-stage freezing schedule.
enum class ParamGroup {
  kEncoder,     // frozen speech-encoder stand-in
  kTltr,        // time/layer-wise transformer of the EQ-former
  kQformer,     // learnable queries + Q-former blocks
  kProjection,  // EQ-former -> LM embedding projection
  kLmBase,      // frozen language-model weights
  kPloraE,      // adapters serving EMOTION positions
  kPloraT,      // adapters serving TEXT positions
  kLoraShared,  // single adapter serving every position (ablation)
  kAcoustic,    // stage-3 synthesizer
};

inline constexpr std::string_view group_name(ParamGroup g) {
  switch (g) {
    case ParamGroup::kEncoder: return "encoder";
    case ParamGroup::kTltr: return "tltr";
    case ParamGroup::kQformer: return "qformer";
    case ParamGroup::kProjection: return "projection";
    case ParamGroup::kLmBase: return "lm_base";
    case ParamGroup::kPloraE: return "plora_e";
    case ParamGroup::kPloraT: return "plora_t";
    case ParamGroup::kLoraShared: return "lora_shared";
    case ParamGroup::kAcoustic: return "acoustic";
  }
  return "?";
}

inline ParamGroup parse_group(std::string_view s) {
  for (auto g : {ParamGroup::kEncoder, ParamGroup::kTltr, ParamGroup::kQformer,
                 ParamGroup::kProjection, ParamGroup::kLmBase, ParamGroup::kPloraE,
                 ParamGroup::kPloraT, ParamGroup::kLoraShared,
                 ParamGroup::kAcoustic}) {
    if (group_name(g) == s) return g;
  }
  fail(ErrorKind::kFormat, "unknown parameter group '" + std::string(s) + "'");
}

using GroupSet = std::set<ParamGroup>;

template <typename T>
struct Param {
  std::string name;
  ParamGroup group;
  Mat<T> value;
  Mat<T> grad;
  bool trainable = false;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

// Owns every named tensor of a model, in registration order.
template <typename T>
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;

  Param<T>& add(std::string name, ParamGroup group, Mat<T> init) {
    require(!index_.contains(name), ErrorKind::kConfig,
            "duplicate parameter name " + name);
    auto p = std::make_unique<Param<T>>();
    p->name = std::move(name);
    p->group = group;
    p->value = std::move(init);
    p->zero_grad();
    index_[p->name] = params_.size();
    params_.push_back(std::move(p));
    return *params_.back();
  }

  Param<T>* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : params_[it->second].get();
  }
  const Param<T>* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : params_[it->second].get();
  }
  Param<T>& at(const std::string& name) {
    auto* p = find(name);
    require(p != nullptr, ErrorKind::kIncompatible, "missing parameter " + name);
    return *p;
  }

  std::size_t size() const { return params_.size(); }
  Param<T>& operator[](std::size_t i) { return *params_[i]; }
  const Param<T>& operator[](std::size_t i) const { return *params_[i]; }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  // Marks exactly the parameters of `groups` trainable.
  void set_trainable(const GroupSet& groups) {
    for (auto& p : params_) p->trainable = groups.contains(p->group);
  }

  std::vector<Param<T>*> trainable() {
    std::vector<Param<T>*> out;
    for (auto& p : params_) {
      if (p->trainable) out.push_back(p.get());
    }
    return out;
  }

  std::size_t count_in(ParamGroup g) const {
    std::size_t n = 0;
    for (const auto& p : params_) {
      if (p->group == g) n += static_cast<std::size_t>(p->value.size());
    }
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p->zero_grad();
  }

  std::map<std::string, std::string> digests() const {
    std::map<std::string, std::string> out;
    for (const auto& p : params_) out[p->name] = tensor_digest(p->value);
    return out;
  }

 private:
  std::vector<std::unique_ptr<Param<T>>> params_;
  std::map<std::string, std::size_t> index_;
};

// Names of tensors whose digests differ between two snapshots.
inline std::set<std::string> digest_diff(
    const std::map<std::string, std::string>& before,
    const std::map<std::string, std::string>& after) {
  std::set<std::string> changed;
  for (const auto& [name, d] : after) {
    auto it = before.find(name);
    if (it == before.end() || it->second != d) changed.insert(name);
  }
  for (const auto& [name, d] : before) {
    if (!after.contains(name)) changed.insert(name);
  }
  return changed;
}

}  // namespace jelly
