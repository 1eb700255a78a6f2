// Copyright 2026 The jelly-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// RunConfig: one declarative JSON document covering corpus, model, training
// and ablation settings. A document names a preset ("toy" or "paper") and
// overrides any subset of its fields; unknown keys are rejected with their
// key path.

#include <cstdlib>
#include <filesystem>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "jelly/acoustic.hpp"
#include "jelly/corpus.hpp"
#include "jelly/eqformer.hpp"
#include "jelly/optim.hpp"
#include "jelly/plora_lm.hpp"

namespace jelly {

struct AblationFlags {
  bool use_tltr = true;
  bool use_qformer = true;
  PloraMode plora_mode = PloraMode::kMultiple;
  bool skip_stage1 = false;
  bool skip_pretrain = false;

  bool operator==(const AblationFlags&) const = default;
};

struct TrainPlan {
  OptimConfig stage1;
  OptimConfig pretrain;
  OptimConfig stage2;
  OptimConfig stage3;
  int validate_every = 100;
  int validation_limit = 0;     // 0: whole validation split
  int text_dialogues = 2000;    // extra text-only dialogues for pretraining
};

struct RunConfig {
  std::string preset = "toy";
  std::uint64_t seed = 1;
  CorpusSpec corpus;
  EncoderConfig encoder;
  EqFormerConfig eqformer;
  LmConfig lm;
  AcousticConfig acoustic;
  TrainPlan train;
  AblationFlags ablation;
  std::string artifact_root;  // empty: $JELLY_LAB_HOME or ./jelly-artifacts

  // Applies the ablation flags and cross-module widths to the model configs.
  EqFormerConfig effective_eqformer() const {
    EqFormerConfig c = eqformer;
    c.use_tltr = ablation.use_tltr;
    c.use_qformer = ablation.use_qformer;
    c.projection_out_dim = lm.dim;
    return c;
  }

  LmConfig effective_lm() const {
    LmConfig c = lm;
    c.plora_mode = ablation.plora_mode;
    return c;
  }

  EncoderConfig effective_encoder() const {
    EncoderConfig c = encoder;
    c.feature_dim = corpus.feature_dim;
    return c;
  }

  std::filesystem::path root() const {
    if (!artifact_root.empty()) return artifact_root;
    if (const char* home = std::getenv("JELLY_LAB_HOME"); home != nullptr && *home != '\0') {
      return home;
    }
    return "jelly-artifacts";
  }
};

namespace config_detail {

// Field visitors shared by serialization and strict parsing.
template <typename V>
void visit(V& v, CorpusSpec& s) {
  v("num_dialogues", s.num_dialogues);
  v("min_utterances", s.min_utterances);
  v("max_utterances", s.max_utterances);
  v("feature_dim", s.feature_dim);
  v("min_frames", s.min_frames);
  v("max_frames", s.max_frames);
  v("vocab_size", s.vocab_size);
  v("train_ratio", s.train_ratio);
  v("val_ratio", s.val_ratio);
  v("test_ratio", s.test_ratio);
  v("seed", s.seed);
  v("noise_scale", s.noise_scale);
  v("oscillation", s.oscillation);
  v("cue_rate", s.cue_rate);
  v("num_speakers", s.num_speakers);
  v("twin_rate", s.twin_rate);
}

template <typename V>
void visit(V& v, EncoderConfig& c) {
  v("dim", c.dim);
  v("layers", c.layers);
  v("heads", c.heads);
}

template <typename V>
void visit(V& v, EqFormerConfig& c) {
  v("num_query_tokens", c.num_query_tokens);
  v("query_dim", c.query_dim);
  v("num_qformer_blocks", c.num_qformer_blocks);
  v("qformer_heads", c.qformer_heads);
  v("tltr_heads", c.tltr_heads);
}

template <typename V>
void visit(V& v, LmConfig& c) {
  v("vocab_size", c.vocab_size);
  v("dim", c.dim);
  v("heads", c.heads);
  v("blocks", c.blocks);
  v("max_positions", c.max_positions);
  v("rank", c.rank);
  v("scale", c.scale);
  v("adapter_init_std", c.adapter_init_std);
}

template <typename V>
void visit(V& v, AcousticConfig& c) {
  v("vocab_size", c.vocab_size);
  v("mel_bins", c.mel_bins);
  v("dim", c.dim);
  v("heads", c.heads);
  v("encoder_blocks", c.encoder_blocks);
  v("decoder_blocks", c.decoder_blocks);
  v("predictor_hidden", c.predictor_hidden);
  v("num_speakers", c.num_speakers);
  v("max_duration", c.max_duration);
}

template <typename V>
void visit(V& v, OptimConfig& c) {
  v("steps", c.steps);
  v("warmup_steps", c.warmup_steps);
  v("peak_lr", c.peak_lr);
  v("min_lr", c.min_lr);
  v("beta1", c.beta1);
  v("beta2", c.beta2);
  v("eps", c.eps);
  v("weight_decay", c.weight_decay);
  v("clip_norm", c.clip_norm);
  v("batch_size", c.batch_size);
}

template <typename V>
void visit(V& v, AblationFlags& a) {
  v("use_tltr", a.use_tltr);
  v("use_qformer", a.use_qformer);
  v("plora_mode", a.plora_mode);
  v("skip_stage1", a.skip_stage1);
  v("skip_pretrain", a.skip_pretrain);
}

template <typename V>
void visit(V& v, TrainPlan& p) {
  v("stage1", p.stage1);
  v("pretrain", p.pretrain);
  v("stage2", p.stage2);
  v("stage3", p.stage3);
  v("validate_every", p.validate_every);
  v("validation_limit", p.validation_limit);
  v("text_dialogues", p.text_dialogues);
}

template <typename V>
void visit(V& v, RunConfig& c) {
  v("preset", c.preset);
  v("seed", c.seed);
  v("corpus", c.corpus);
  v("encoder", c.encoder);
  v("eqformer", c.eqformer);
  v("lm", c.lm);
  v("acoustic", c.acoustic);
  v("train", c.train);
  v("ablation", c.ablation);
  v("artifact_root", c.artifact_root);
}

struct Writer {
  nlohmann::json& out;

  template <typename F>
  void operator()(const char* key, F& field) {
    if constexpr (std::is_same_v<F, PloraMode>) {
      out[key] = std::string(to_string(field));
    } else if constexpr (std::is_arithmetic_v<F> || std::is_same_v<F, std::string>) {
      out[key] = field;
    } else {
      nlohmann::json sub = nlohmann::json::object();
      Writer w{sub};
      visit(w, field);
      out[key] = std::move(sub);
    }
  }
};

struct Reader {
  const nlohmann::json& in;
  std::string path;
  std::set<std::string> seen;

  static std::string join(const std::string& path, const char* key) {
    return path.empty() ? std::string(key) : path + "." + key;
  }

  template <typename F>
  void operator()(const char* key, F& field) {
    seen.insert(key);
    auto it = in.find(key);
    if (it == in.end()) return;
    const std::string where = join(path, key);
    const auto& j = *it;
    auto type_error = [&](const char* want) {
      fail(ErrorKind::kConfig, where + ": expected " + want + ", got " + j.dump());
    };
    if constexpr (std::is_same_v<F, bool>) {
      if (!j.is_boolean()) type_error("a boolean");
      field = j.get<bool>();
    } else if constexpr (std::is_integral_v<F>) {
      if (!j.is_number_integer()) type_error("an integer");
      if constexpr (std::is_unsigned_v<F>) {
        if (j.is_number_unsigned() || j.get<long long>() >= 0) {
          field = j.get<F>();
        } else {
          type_error("a non-negative integer");
        }
      } else {
        field = j.get<F>();
      }
    } else if constexpr (std::is_floating_point_v<F>) {
      if (!j.is_number()) type_error("a number");
      field = j.get<F>();
    } else if constexpr (std::is_same_v<F, std::string>) {
      if (!j.is_string()) type_error("a string");
      field = j.get<std::string>();
    } else if constexpr (std::is_same_v<F, PloraMode>) {
      if (!j.is_string()) type_error("a string");
      try {
        field = parse_plora_mode(j.get<std::string>());
      } catch (const Error& e) {
        fail(ErrorKind::kConfig, where + ": " + e.what());
      }
    } else {
      if (!j.is_object()) type_error("an object");
      Reader sub{j, where, {}};
      visit(sub, field);
      sub.reject_unknown();
    }
  }

  void reject_unknown() const {
    for (const auto& [k, v] : in.items()) {
      require(seen.contains(k), ErrorKind::kConfig,
              "unknown config key '" + join(path, k.c_str()) + "'");
    }
  }
};

}  // namespace config_detail

// Desk-scale defaults: runs the whole pipeline in a few CPU minutes.
inline RunConfig toy_preset() {
  RunConfig c;
  c.preset = "toy";
  auto stage = [](int steps, int warmup) {
    OptimConfig o;
    o.steps = steps;
    o.warmup_steps = warmup;
    o.peak_lr = 3e-3;
    o.min_lr = 3e-4;
    return o;
  };
  c.train.stage1 = stage(2000, 200);
  c.train.pretrain = stage(3000, 300);
  c.train.stage2 = stage(3000, 300);
  c.train.stage3 = stage(2000, 200);
  c.train.validate_every = 250;
  c.train.validation_limit = 100;
  c.acoustic.mel_bins = 20;
  return c;
}

// Published hyperparameters. Documents the full-scale setup; the LM width
// is far beyond what this code base trains on a desk.
inline RunConfig paper_preset() {
  RunConfig c = toy_preset();
  c.preset = "paper";
  c.encoder.layers = 32;
  c.encoder.dim = 1280;
  c.encoder.heads = 20;
  c.eqformer.num_query_tokens = 25;
  c.eqformer.query_dim = 768;
  c.eqformer.qformer_heads = 12;
  c.eqformer.tltr_heads = 20;
  c.lm.dim = 4096;
  c.lm.heads = 32;
  c.lm.blocks = 32;
  c.lm.max_positions = 2048;
  c.lm.rank = 8;
  c.lm.scale = 4.0;
  c.acoustic.mel_bins = 80;
  auto stage = [](int steps) {
    OptimConfig o;
    o.steps = steps;
    o.warmup_steps = 3000;
    o.peak_lr = 3e-5;
    o.min_lr = 1e-5;
    o.beta1 = 0.9;
    o.beta2 = 0.999;
    o.weight_decay = 0.05;
    return o;
  };
  c.train.stage1 = stage(180000);
  c.train.pretrain = stage(30000);
  c.train.stage2 = stage(30000);
  c.train.stage3 = stage(275000);
  c.train.stage3.beta2 = 0.98;
  c.train.validate_every = 1000;
  c.train.validation_limit = 0;
  return c;
}

inline RunConfig preset(std::string_view name) {
  if (name == "toy") return toy_preset();
  if (name == "paper") return paper_preset();
  fail(ErrorKind::kConfig, "preset: unknown preset '" + std::string(name) + "'");
}

inline void validate(const RunConfig& c) {
  detail::validate_spec(c.corpus);
  c.train.stage1.validate("train.stage1");
  c.train.pretrain.validate("train.pretrain");
  c.train.stage2.validate("train.stage2");
  c.train.stage3.validate("train.stage3");
  require(c.train.validate_every >= 1, ErrorKind::kConfig, "train.validate_every: must be >= 1");
  require(c.train.validation_limit >= 0, ErrorKind::kConfig,
          "train.validation_limit: must be >= 0");
  require(c.train.text_dialogues >= 0, ErrorKind::kConfig, "train.text_dialogues: must be >= 0");
  require(c.lm.dim % c.lm.heads == 0, ErrorKind::kConfig, "lm.dim: must be divisible by lm.heads");
  require(c.lm.rank >= 1, ErrorKind::kConfig, "lm.rank: must be >= 1");
  require(c.encoder.dim % c.encoder.heads == 0, ErrorKind::kConfig,
          "encoder.dim: must be divisible by encoder.heads");
  require(c.eqformer.num_query_tokens >= 1, ErrorKind::kConfig,
          "eqformer.num_query_tokens: must be >= 1");
  require(c.acoustic.num_speakers >= c.corpus.num_speakers, ErrorKind::kConfig,
          "acoustic.num_speakers: must cover corpus.num_speakers");
}

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j = nlohmann::json::object();
  config_detail::Writer w{j};
  RunConfig copy = c;
  config_detail::visit(w, copy);
  return j;
}

// The emotion inventory is fixed; a config may list it for documentation
// but cannot change it.
inline void check_emotion_list(const nlohmann::json& list) {
  require(list.is_array(), ErrorKind::kConfig, "corpus.emotions: expected a list");
  std::set<Emotion> seen;
  for (std::size_t k = 0; k < list.size(); ++k) {
    const std::string where = "corpus.emotions[" + std::to_string(k) + "]";
    require(list[k].is_string(), ErrorKind::kConfig, where + ": expected a string");
    auto e = try_parse_emotion(list[k].get<std::string>());
    require(e.has_value(), ErrorKind::kConfig,
            where + ": unknown emotion '" + list[k].get<std::string>() + "'");
    require(seen.insert(*e).second, ErrorKind::kConfig, where + ": duplicate emotion");
  }
  require(static_cast<int>(seen.size()) == kNumEmotions, ErrorKind::kConfig,
          "corpus.emotions: must list all " + std::to_string(kNumEmotions) + " emotions");
}

// Preset defaults overlaid with the document's fields.
inline RunConfig from_json(const nlohmann::json& doc) {
  require(doc.is_object(), ErrorKind::kConfig, "config: top level must be an object");
  std::string name = "toy";
  if (auto it = doc.find("preset"); it != doc.end()) {
    require(it->is_string(), ErrorKind::kConfig, "preset: expected a string");
    name = it->get<std::string>();
  }
  RunConfig c = preset(name);
  nlohmann::json body = doc;
  if (auto it = body.find("corpus"); it != body.end() && it->is_object() &&
                                     it->contains("emotions")) {
    check_emotion_list(it->at("emotions"));
    it->erase("emotions");
  }
  config_detail::Reader r{body, "", {}};
  config_detail::visit(r, c);
  r.reject_unknown();
  validate(c);
  return c;
}

inline RunConfig parse_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::kConfig, std::string("config: malformed JSON: ") + e.what());
  }
  return from_json(j);
}

inline RunConfig load_config(const std::filesystem::path& path) {
  return parse_config(io::read_text(path));
}

}  // namespace jelly
