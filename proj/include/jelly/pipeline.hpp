// Copyright 2026 The jelly-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Three-stage training pipeline: freeze plans, the training loop with
// validation, divergence abort and resumable data order, evaluation,
// inference chaining and the ablation grid.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "jelly/acoustic.hpp"
#include "jelly/assembly.hpp"
#include "jelly/checkpoint.hpp"
#include "jelly/config.hpp"
#include "jelly/eqformer.hpp"
#include "jelly/metrics.hpp"
#include "jelly/optim.hpp"
#include "jelly/plora_lm.hpp"

namespace jelly {

enum class Stage { kStage1, kPretrain, kStage2, kStage3 };

inline std::string_view stage_tag(Stage s) {
  switch (s) {
    case Stage::kStage1: return "stage1";
    case Stage::kPretrain: return "pretrain";
    case Stage::kStage2: return "stage2";
    case Stage::kStage3: return "stage3";
  }
  return "?";
}

inline Stage parse_stage(std::string_view s) {
  for (auto st : {Stage::kStage1, Stage::kPretrain, Stage::kStage2, Stage::kStage3}) {
    if (stage_tag(st) == s) return st;
  }
  fail(ErrorKind::kFormat, "unknown stage tag '" + std::string(s) + "'");
}

inline GroupSet adapter_groups(PloraMode m, bool emotion, bool text) {
  switch (m) {
    case PloraMode::kMultiple: {
      GroupSet g;
      if (emotion) g.insert(ParamGroup::kPloraE);
      if (text) g.insert(ParamGroup::kPloraT);
      return g;
    }
    case PloraMode::kSingleLora: return {ParamGroup::kLoraShared};
    case PloraMode::kNone: return {};
  }
  return {};
}

// Parameter groups trainable in each stage; everything else is frozen.
inline GroupSet freeze_plan(Stage s, PloraMode m) {
  GroupSet g;
  switch (s) {
    case Stage::kStage1:
      g = {ParamGroup::kTltr, ParamGroup::kQformer, ParamGroup::kProjection};
      g.merge(adapter_groups(m, true, true));
      break;
    case Stage::kPretrain: g = adapter_groups(m, false, true); break;
    case Stage::kStage2:
      g = {ParamGroup::kQformer, ParamGroup::kProjection};
      g.merge(adapter_groups(m, true, true));
      break;
    case Stage::kStage3: g = {ParamGroup::kAcoustic}; break;
  }
  return g;
}

template <typename T>
std::set<std::string> tensor_names(const ParamStore<T>& store, const GroupSet& groups) {
  std::set<std::string> out;
  for (const auto& p : store) {
    if (groups.contains(p->group)) out.insert(p->name);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Models.

template <typename T>
class EncoderCache {
 public:
  const LayeredEncoding<T>& get(const LayeredEncoder<T>& enc, const Utterance& u) {
    auto it = cache_.find(&u);
    if (it != cache_.end()) return it->second;
    return cache_[&u] = enc.encode_layers(u.features.template cast<T>());
  }

 private:
  std::map<const Utterance*, LayeredEncoding<T>> cache_;
};

// Encoder stand-in + EQ-former + adapted LM over one parameter store.
template <typename T>
class ReasoningModel {
 public:
  explicit ReasoningModel(const RunConfig& cfg)
      : cfg_(cfg),
        store_(std::make_unique<ParamStore<T>>()),
        encoder_(*store_, cfg.effective_encoder(), cfg.seed),
        eqformer_(*store_, cfg.effective_eqformer(), cfg.effective_encoder(), cfg.seed),
        lm_(*store_, cfg.effective_lm(), cfg.seed) {}

  ReasoningModel(const ReasoningModel&) = delete;
  ReasoningModel& operator=(const ReasoningModel&) = delete;

  const RunConfig& config() const { return cfg_; }
  ParamStore<T>& store() { return *store_; }
  const ParamStore<T>& store() const { return *store_; }
  const LayeredEncoder<T>& encoder() const { return encoder_; }
  const EqFormer<T>& eqformer() const { return eqformer_; }
  const PloraLm<T>& lm() const { return lm_; }
  const Vocabulary& vocab() const { return vocab_; }
  EncoderCache<T>& cache() { return cache_; }

  AssemblyOptions options(bool with_answer) const {
    AssemblyOptions o;
    o.emotion_rows = eqformer_.output_rows();
    o.max_positions = lm_.config().max_positions;
    o.with_answer = with_answer;
    return o;
  }

  ag::Var<T> emotion_rows(ag::Tape<T>& t, const Utterance& u) {
    return eqformer_.forward(t, cache_.get(encoder_, u)).embedding;
  }

  // LM input rows for a layout whose speech segments come from `d`.
  ag::Var<T> embed(ag::Tape<T>& t, const ContextLayout& c, const Dialogue* d,
                   const Utterance* single = nullptr) {
    return embed_context(t, c, lm_, [&](int turn) -> ag::Var<T> {
      if (single != nullptr) return emotion_rows(t, *single);
      require(d != nullptr, ErrorKind::kShape, "embed: speech segment without a dialogue");
      return emotion_rows(t, d->utterances[static_cast<std::size_t>(turn)]);
    });
  }

  ag::Var<T> loss(ag::Tape<T>& t, const ContextLayout& c, const Dialogue* d,
                  const Utterance* single = nullptr) {
    auto emb = embed(t, c, d, single);
    return lm_loss(lm_.forward(t, emb, c.tags), c.tokens, c.loss_mask);
  }

  GenerationResult generate(const ContextLayout& c, const Dialogue* d,
                            const Utterance* single = nullptr) {
    ag::Tape<T> t(false);
    auto emb = embed(t, c, d, single);
    return generate_answer(lm_, emb.value(), c.tags, AnswerSchema(vocab_));
  }

 private:
  RunConfig cfg_;
  Vocabulary vocab_;
  std::unique_ptr<ParamStore<T>> store_;
  LayeredEncoder<T> encoder_;
  EqFormer<T> eqformer_;
  PloraLm<T> lm_;
  EncoderCache<T> cache_;
};

template <typename T>
class AcousticStack {
 public:
  explicit AcousticStack(const RunConfig& cfg)
      : store_(std::make_unique<ParamStore<T>>()), model_(*store_, cfg.acoustic, cfg.seed) {}

  AcousticStack(const AcousticStack&) = delete;
  AcousticStack& operator=(const AcousticStack&) = delete;

  ParamStore<T>& store() { return *store_; }
  const ParamStore<T>& store() const { return *store_; }
  const AcousticModel<T>& model() const { return model_; }

 private:
  std::unique_ptr<ParamStore<T>> store_;
  AcousticModel<T> model_;
};

// ---------------------------------------------------------------------------
// Evaluation.

struct LabelPrediction {
  std::string id;
  TurnLabel reference;
  bool parsed = false;
  TurnLabel predicted{Emotion::kNeutral, Intensity::kMedium};
};

struct EvalSummary {
  metrics::ClassificationReport emotion;
  metrics::ClassificationReport intensity;
  long unparseable = 0;
  long count = 0;
  std::vector<LabelPrediction> predictions;
};

// Unparseable answers count as an extra category that never matches.
inline EvalSummary summarize(std::vector<LabelPrediction> preds) {
  require(!preds.empty(), ErrorKind::kShape, "evaluate: no examples");
  std::vector<int> er, ep, ir, ip;
  EvalSummary s;
  for (const auto& p : preds) {
    er.push_back(index_of(p.reference.emotion));
    ir.push_back(index_of(p.reference.intensity));
    ep.push_back(p.parsed ? index_of(p.predicted.emotion) : kNumEmotions);
    ip.push_back(p.parsed ? index_of(p.predicted.intensity) : kNumIntensities);
    s.unparseable += !p.parsed;
  }
  s.emotion = metrics::classification_metrics(er, ep, kNumEmotions + 1);
  s.intensity = metrics::classification_metrics(ir, ip, kNumIntensities + 1);
  s.count = static_cast<long>(preds.size());
  s.predictions = std::move(preds);
  return s;
}

inline nlohmann::json to_json(const EvalSummary& s) {
  auto rep = [](const metrics::ClassificationReport& r) {
    return nlohmann::json{{"wa", r.wa}, {"ua", r.ua}, {"f1", r.macro_f1}};
  };
  return {{"count", s.count},
          {"unparseable", s.unparseable},
          {"emotion", rep(s.emotion)},
          {"intensity", rep(s.intensity)}};
}

template <typename T>
LabelPrediction predict_dialogue(ReasoningModel<T>& m, const Dialogue& d, AssemblyMode mode) {
  auto ctx = build_context(d, d.current_turn, mode, m.vocab(), m.options(false));
  auto g = m.generate(ctx, &d);
  const auto& u = d.utterances[static_cast<std::size_t>(d.current_turn)];
  LabelPrediction p{d.dialogue_id, {u.emotion, u.intensity}, g.parsed, {g.emotion, g.intensity}};
  return p;
}

// Dialogue-level accuracy; mode is INFER_SPEECH_ONLY or STAGE2_PRETRAIN_TEXT.
template <typename T>
EvalSummary evaluate_dialogues(ReasoningModel<T>& m, const std::vector<Dialogue>& ds,
                               AssemblyMode mode, int limit = 0) {
  std::vector<LabelPrediction> preds;
  const std::size_t n = limit > 0 ? std::min(ds.size(), static_cast<std::size_t>(limit))
                                  : ds.size();
  for (std::size_t k = 0; k < n; ++k) preds.push_back(predict_dialogue(m, ds[k], mode));
  return summarize(std::move(preds));
}

// Utterance-level accuracy of single-utterance alignment contexts.
template <typename T>
EvalSummary evaluate_utterances(ReasoningModel<T>& m, const std::vector<const Utterance*>& us,
                                int limit = 0) {
  std::vector<LabelPrediction> preds;
  const std::size_t n = limit > 0 ? std::min(us.size(), static_cast<std::size_t>(limit))
                                  : us.size();
  AssemblyOptions o = m.options(false);
  for (std::size_t k = 0; k < n; ++k) {
    const auto& u = *us[k];
    auto ctx = build_utterance_context(u, m.vocab(), o);
    auto g = m.generate(ctx, nullptr, &u);
    preds.push_back({u.record_id, {u.emotion, u.intensity}, g.parsed, {g.emotion, g.intensity}});
  }
  return summarize(std::move(preds));
}

inline std::vector<const Utterance*> utterances_of(const std::vector<Dialogue>& ds) {
  std::vector<const Utterance*> out;
  for (const auto& d : ds) {
    for (const auto& u : d.utterances) out.push_back(&u);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training loop.

// Append-only JSON-lines log; a default-constructed log discards records.
class TrainLog {
 public:
  TrainLog() = default;
  explicit TrainLog(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    out_ = std::make_unique<std::ofstream>(path, std::ios::app);
    require(static_cast<bool>(*out_), ErrorKind::kIo, "cannot open log " + path.string());
  }

  void write(const nlohmann::json& record) {
    if (out_) *out_ << record.dump() << '\n';
  }

 private:
  std::unique_ptr<std::ofstream> out_;
};

struct ValidationPoint {
  long step = 0;
  double emotion_wa = 0.0;
  double intensity_wa = 0.0;
};

struct TrainOptions {
  long stop_after = -1;  // stop at this step (for checkpoint-and-resume); -1: run all
  TrainLog* log = nullptr;
  std::filesystem::path divergence_dir;  // snapshot written here on NaN
};

template <typename T>
struct StageRun {
  Stage stage = Stage::kStage1;
  GroupSet plan;
  std::map<std::string, std::string> digests_before;
  std::map<std::string, std::string> digests_after;
  std::set<std::string> changed;
  std::set<std::string> expected;
  std::vector<double> losses;  // mean batch loss per step
  std::vector<ValidationPoint> validations;
  std::map<std::string, Mat<T>> best;  // trainable tensors at the best validation
  double best_wa = -1.0;
  long steps_done = 0;
  std::unique_ptr<AdamW<T>> optimizer;

  bool audit_ok() const { return changed == expected; }
};

// Index of example `b` of the batch at `step`; a pure function of
// (seed, stage, step, b) so resumed runs see the same data order.
inline std::size_t example_index(std::uint64_t seed, Stage s, long step, int b, int batch,
                                 std::size_t n) {
  const std::uint64_t base = derive_seed(seed, stage_tag(s));
  return static_cast<std::size_t>(
      derive_seed(base, static_cast<std::uint64_t>(step) * static_cast<std::uint64_t>(batch) +
                            static_cast<std::uint64_t>(b)) %
      n);
}

template <typename T>
void write_divergence_snapshot(const ParamStore<T>& store, Stage s, long step,
                               const TrainOptions& opt, const Vocabulary& vocab) {
  if (opt.divergence_dir.empty()) return;
  SaveRequest<T> req;
  req.stage = std::string(stage_tag(s)) + "-diverged";
  req.step = step;
  save_checkpoint(opt.divergence_dir, store, req, vocab);
}

// Generic loop. `loss_fn(tape, example)` builds one example's loss;
// `validate()` returns a validation point (without its step).
template <typename T, typename LossFn, typename ValidateFn>
StageRun<T> run_training(ParamStore<T>& store, Stage stage, const GroupSet& plan,
                         const OptimConfig& oc, std::uint64_t seed, std::size_t num_examples,
                         int validate_every, LossFn&& loss_fn, ValidateFn&& validate,
                         const Vocabulary& vocab, const TrainOptions& opt,
                         std::unique_ptr<AdamW<T>> resume = nullptr) {
  oc.validate(std::string("train.") + std::string(stage_tag(stage)));
  require(num_examples > 0, ErrorKind::kShape,
          std::string(stage_tag(stage)) + ": no training examples");
  StageRun<T> run;
  run.stage = stage;
  run.plan = plan;
  run.expected = tensor_names(store, plan);
  run.digests_before = store.digests();
  run.optimizer = resume ? std::move(resume) : std::make_unique<AdamW<T>>(oc);
  store.set_trainable(plan);
  const long end = opt.stop_after >= 0 ? std::min<long>(opt.stop_after, oc.steps) : oc.steps;
  const bool any_trainable = !store.trainable().empty();
  for (long step = run.optimizer->step(); any_trainable && step < end; ++step) {
    store.zero_grad();
    double total = 0.0;
    for (int b = 0; b < oc.batch_size; ++b) {
      ag::Tape<T> t;
      const auto k = example_index(seed, stage, step, b, oc.batch_size, num_examples);
      auto l = ag::scale(loss_fn(t, k), T(1) / static_cast<T>(oc.batch_size));
      t.backward(l);
      total += static_cast<double>(l.value()(0, 0));
    }
    const double norm = run.optimizer->clip(store);
    if (!std::isfinite(total) || !std::isfinite(norm)) {
      write_divergence_snapshot(store, stage, step, opt, vocab);
      fail(ErrorKind::kDivergence, std::string(stage_tag(stage)) + ": non-finite loss (" +
                                       std::to_string(total) + ") or gradient norm at step " +
                                       std::to_string(step));
    }
    const double lr = run.optimizer->update(store);
    run.losses.push_back(total);
    if (opt.log != nullptr) {
      opt.log->write({{"stage", stage_tag(stage)},
                      {"step", step + 1},
                      {"loss", total},
                      {"lr", lr},
                      {"grad_norm", norm}});
    }
    if ((step + 1) % validate_every == 0 || step + 1 == oc.steps) {
      if (auto v = validate()) {
        v->step = step + 1;
        run.validations.push_back(*v);
        if (opt.log != nullptr) {
          opt.log->write({{"stage", stage_tag(stage)},
                          {"step", step + 1},
                          {"split", "val"},
                          {"emotion_wa", v->emotion_wa},
                          {"intensity_wa", v->intensity_wa}});
        }
        if (v->emotion_wa > run.best_wa) {
          run.best_wa = v->emotion_wa;
          run.best.clear();
          for (auto* p : store.trainable()) run.best[p->name] = p->value;
        }
      }
    }
  }
  store.set_trainable({});
  run.steps_done = run.optimizer->step();
  run.digests_after = store.digests();
  run.changed = digest_diff(run.digests_before, run.digests_after);
  return run;
}

// ---------------------------------------------------------------------------
// Stages.

template <typename T>
std::optional<ValidationPoint> no_validation() {
  return std::nullopt;
}

template <typename T>
StageRun<T> train_stage1(ReasoningModel<T>& m, const Corpus& c, const TrainOptions& opt = {},
                         std::unique_ptr<AdamW<T>> resume = nullptr) {
  const auto& cfg = m.config();
  const auto train = utterances_of(c.train);
  const auto val = utterances_of(c.val);
  const AssemblyOptions o = m.options(true);
  auto loss = [&](ag::Tape<T>& t, std::size_t k) {
    const auto& u = *train[k];
    return m.loss(t, build_utterance_context(u, m.vocab(), o), nullptr, &u);
  };
  auto validate = [&]() -> std::optional<ValidationPoint> {
    if (val.empty()) return std::nullopt;
    auto s = evaluate_utterances(m, val, cfg.train.validation_limit);
    return ValidationPoint{0, s.emotion.wa, s.intensity.wa};
  };
  return run_training(m.store(), Stage::kStage1, freeze_plan(Stage::kStage1, cfg.ablation.plora_mode),
                      cfg.train.stage1, cfg.seed, train.size(), cfg.train.validate_every, loss,
                      validate, m.vocab(), opt, std::move(resume));
}

// Dialogues of the text-only pre-training view: the train split plus extra
// generated text dialogues.
inline std::vector<Dialogue> pretrain_dialogues(const RunConfig& cfg, const Corpus& c) {
  std::vector<Dialogue> out = c.train;
  auto extra = generate_text_dialogues(c.spec, cfg.train.text_dialogues,
                                       derive_seed(cfg.seed, "text-dialogues"));
  out.insert(out.end(), std::make_move_iterator(extra.begin()),
             std::make_move_iterator(extra.end()));
  return out;
}

template <typename T>
StageRun<T> pretrain_stage2_text(ReasoningModel<T>& m, const Corpus& c,
                                 const TrainOptions& opt = {},
                                 std::unique_ptr<AdamW<T>> resume = nullptr) {
  const auto& cfg = m.config();
  const auto dialogues = pretrain_dialogues(cfg, c);
  const AssemblyOptions o = m.options(true);
  auto loss = [&](ag::Tape<T>& t, std::size_t k) {
    const auto& d = dialogues[k];
    return m.loss(t,
                  build_context(d, d.current_turn, AssemblyMode::kStage2PretrainText, m.vocab(), o),
                  &d);
  };
  auto validate = [&]() -> std::optional<ValidationPoint> {
    if (c.val.empty()) return std::nullopt;
    auto s = evaluate_dialogues(m, c.val, AssemblyMode::kStage2PretrainText,
                                cfg.train.validation_limit);
    return ValidationPoint{0, s.emotion.wa, s.intensity.wa};
  };
  return run_training(m.store(), Stage::kPretrain,
                      freeze_plan(Stage::kPretrain, cfg.ablation.plora_mode), cfg.train.pretrain,
                      cfg.seed, dialogues.size(), cfg.train.validate_every, loss, validate,
                      m.vocab(), opt, std::move(resume));
}

template <typename T>
StageRun<T> train_stage2(ReasoningModel<T>& m, const Corpus& c, const TrainOptions& opt = {},
                         std::unique_ptr<AdamW<T>> resume = nullptr) {
  const auto& cfg = m.config();
  const AssemblyOptions o = m.options(true);
  auto loss = [&](ag::Tape<T>& t, std::size_t k) {
    const auto& d = c.train[k];
    return m.loss(
        t, build_context(d, d.current_turn, AssemblyMode::kStage2Finetune, m.vocab(), o), &d);
  };
  auto validate = [&]() -> std::optional<ValidationPoint> {
    if (c.val.empty()) return std::nullopt;
    auto s = evaluate_dialogues(m, c.val, AssemblyMode::kInferSpeechOnly,
                                cfg.train.validation_limit);
    return ValidationPoint{0, s.emotion.wa, s.intensity.wa};
  };
  return run_training(m.store(), Stage::kStage2,
                      freeze_plan(Stage::kStage2, cfg.ablation.plora_mode), cfg.train.stage2,
                      cfg.seed, c.train.size(), cfg.train.validate_every, loss, validate,
                      m.vocab(), opt, std::move(resume));
}

struct AcousticExample {
  const Utterance* utterance;
  AcousticTargets targets;
};

inline std::vector<AcousticExample> acoustic_examples(const std::vector<Dialogue>& ds,
                                                      int mel_bins) {
  std::vector<AcousticExample> out;
  for (const auto* u : utterances_of(ds)) {
    out.push_back({u, acoustic_targets(u->transcript_tokens, u->speaker_id, u->emotion,
                                       u->intensity, mel_bins)});
  }
  return out;
}

template <typename T>
StageRun<T> train_stage3(AcousticStack<T>& a, const RunConfig& cfg, const Corpus& c,
                         const TrainOptions& opt = {},
                         std::unique_ptr<AdamW<T>> resume = nullptr) {
  const auto examples = acoustic_examples(c.train, a.model().config().mel_bins);
  auto loss = [&](ag::Tape<T>& t, std::size_t k) {
    const auto& ex = examples[k];
    const auto& u = *ex.utterance;
    return a.model().loss(t, u.transcript_tokens, u.speaker_id, u.emotion, u.intensity, ex.targets)
        .total;
  };
  return run_training(a.store(), Stage::kStage3, freeze_plan(Stage::kStage3, PloraMode::kMultiple),
                      cfg.train.stage3, cfg.seed, examples.size(), cfg.train.validate_every, loss,
                      no_validation<T>, Vocabulary(), opt, std::move(resume));
}

// ---------------------------------------------------------------------------
// Checkpoint plumbing.

template <typename T>
SaveRequest<T> stage_request(const StageRun<T>& run, const RunConfig& cfg) {
  SaveRequest<T> r;
  r.stage = std::string(stage_tag(run.stage));
  r.step = run.steps_done;
  r.config = to_json(cfg);
  r.trainable = run.plan;
  r.optimizer = run.optimizer.get();
  return r;
}

// Writes `dir` (last state, with optimizer moments) and `dir/best` when a
// validation happened.
template <typename T>
CheckpointInfo save_stage(const std::filesystem::path& dir, ParamStore<T>& store,
                          const StageRun<T>& run, const RunConfig& cfg, const Vocabulary& vocab) {
  auto info = save_checkpoint(dir, store, stage_request(run, cfg), vocab);
  if (!run.best.empty()) {
    std::map<std::string, Mat<T>> last;
    for (const auto& [name, value] : run.best) {
      auto& p = store.at(name);
      last[name] = p.value;
      p.value = value;
    }
    auto req = stage_request(run, cfg);
    req.optimizer = nullptr;
    save_checkpoint(dir / "best", store, req, vocab);
    for (auto& [name, value] : last) store.at(name).value = std::move(value);
  }
  return info;
}

// Resumes a stage from a checkpoint written with optimizer state.
template <typename T>
std::unique_ptr<AdamW<T>> resume_from(const std::filesystem::path& dir, ParamStore<T>& store,
                                      const OptimConfig& oc, const Vocabulary& vocab) {
  auto opt = std::make_unique<AdamW<T>>(oc);
  load_checkpoint(dir, store, vocab, {}, opt.get());
  return opt;
}

// ---------------------------------------------------------------------------
// Inference.

struct InferenceReport {
  std::string dialogue_id;
  int current_turn = 0;
  int context_length = 0;
  bool parsed = false;
  TurnLabel label{Emotion::kNeutral, Intensity::kMedium};
  std::vector<int> raw_ids;
  SynthesisOutput synthesis;  // empty when the answer is unparseable
};

// Reasoning then synthesis. `forced` replaces the predicted labels.
template <typename T>
InferenceReport infer(ReasoningModel<T>& m, const AcousticModel<T>& acoustic, const Dialogue& d,
                      std::optional<TurnLabel> forced = std::nullopt) {
  validate_dialogue(d);
  auto ctx = build_context(d, d.current_turn, AssemblyMode::kInferSpeechOnly, m.vocab(),
                           m.options(false));
  InferenceReport r;
  r.dialogue_id = d.dialogue_id;
  r.current_turn = d.current_turn;
  r.context_length = ctx.length();
  if (forced) {
    r.parsed = true;
    r.label = *forced;
  } else {
    auto g = m.generate(ctx, &d);
    r.parsed = g.parsed;
    r.label = {g.emotion, g.intensity};
    r.raw_ids = g.raw_ids;
  }
  if (r.parsed) {
    const auto& u = d.utterances[static_cast<std::size_t>(d.current_turn)];
    r.synthesis = acoustic.synthesize(u.transcript_tokens, u.speaker_id, r.label.emotion,
                                      r.label.intensity);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Whole reasoning pipeline and ablations.

struct PipelineResult {
  std::string name;
  AblationFlags flags;
  std::optional<EvalSummary> stage1_val;  // utterance-level, after stage 1
  EvalSummary test;
  double seconds = 0.0;
};

struct AblationCell {
  std::string name;
  AblationFlags flags;
};

inline std::vector<AblationCell> default_ablation_grid() {
  auto with = [](auto f) {
    AblationFlags a;
    f(a);
    return a;
  };
  return {{"full", AblationFlags{}},
          {"w/o TLTR", with([](AblationFlags& a) { a.use_tltr = false; })},
          {"w/o Q-former", with([](AblationFlags& a) { a.use_qformer = false; })},
          {"single LoRA", with([](AblationFlags& a) { a.plora_mode = PloraMode::kSingleLora; })},
          {"w/o stage 1", with([](AblationFlags& a) { a.skip_stage1 = true; })},
          {"w/o pre-training", with([](AblationFlags& a) { a.skip_pretrain = true; })}};
}

// Stage 1 -> pretrain -> stage 2 -> test evaluation, in memory, honoring the
// skip flags. `stage1_cache` shares stage-1 parameters between cells whose
// models agree up to skip_pretrain.
template <typename T>
PipelineResult run_reasoning_pipeline(
    const RunConfig& cfg, const Corpus& corpus, const std::string& name = "full",
    std::map<std::string, std::map<std::string, Mat<T>>>* stage1_cache = nullptr,
    TrainLog* log = nullptr) {
  const auto t0 = std::chrono::steady_clock::now();
  PipelineResult res;
  res.name = name;
  res.flags = cfg.ablation;
  ReasoningModel<T> m(cfg);
  TrainOptions opt;
  opt.log = log;
  if (!cfg.ablation.skip_stage1) {
    AblationFlags key_flags = cfg.ablation;
    key_flags.skip_pretrain = false;
    RunConfig key_cfg = cfg;
    key_cfg.ablation = key_flags;
    const std::string key = to_json(key_cfg).dump();
    if (stage1_cache != nullptr && stage1_cache->contains(key)) {
      for (const auto& [n, v] : stage1_cache->at(key)) m.store().at(n).value = v;
    } else {
      train_stage1(m, corpus, opt);
      if (stage1_cache != nullptr) {
        auto& snap = (*stage1_cache)[key];
        for (const auto& p : m.store()) snap[p->name] = p->value;
      }
    }
    if (!corpus.val.empty()) {
      res.stage1_val = evaluate_utterances(m, utterances_of(corpus.val),
                                           cfg.train.validation_limit);
    }
  }
  if (!cfg.ablation.skip_pretrain) pretrain_stage2_text(m, corpus, opt);
  train_stage2(m, corpus, opt);
  res.test = evaluate_dialogues(m, corpus.test, AssemblyMode::kInferSpeechOnly);
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

inline nlohmann::json to_json(const PipelineResult& r) {
  nlohmann::json j{{"name", r.name}, {"test", to_json(r.test)}, {"seconds", r.seconds}};
  if (r.stage1_val) j["stage1_val"] = to_json(*r.stage1_val);
  return j;
}

// Directional checks of the ablation table; empty when all hold.
inline std::vector<std::string> ablation_violations(const std::vector<PipelineResult>& rows) {
  const PipelineResult* full = nullptr;
  for (const auto& r : rows) {
    if (r.name == "full") full = &r;
  }
  std::vector<std::string> out;
  if (full == nullptr) return out;
  for (const auto& r : rows) {
    if ((r.name == "w/o stage 1" || r.name == "w/o pre-training") &&
        r.test.emotion.wa > full->test.emotion.wa) {
      out.push_back(r.name + " emotion WA " + std::to_string(r.test.emotion.wa) +
                    " exceeds full " + std::to_string(full->test.emotion.wa));
    }
  }
  return out;
}

}  // namespace jelly
