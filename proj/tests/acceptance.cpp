// Copyright 2026 The jelly-lab Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance run: one PASS/FAIL line per criterion.
//
//   acceptance            run every criterion
//   acceptance 1 3 10     run a subset

#include <cmath>
#include <cstdio>
#include <ctime>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "jelly/pipeline.hpp"
#include "testing.hpp"

namespace jelly {
namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int digits = 3) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

std::string sci(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2e", v);
  return buf;
}

double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

MatD rnd(int r, int c, std::uint64_t seed, double sd = 1.0) {
  Rng rng(seed);
  return random_normal<double>(r, c, sd, rng);
}

std::vector<Modality> random_tags(int n, Rng& rng) {
  std::vector<Modality> tags(static_cast<std::size_t>(n));
  for (auto& m : tags) m = rng() % 3 == 0 ? Modality::kEmotion : Modality::kText;
  return tags;
}

template <typename T>
void randomize_adapters(ParamStore<T>& store, std::uint64_t seed) {
  for (auto& p : store) {
    if (p->group == ParamGroup::kPloraE || p->group == ParamGroup::kPloraT ||
        p->group == ParamGroup::kLoraShared) {
      Rng rng(seed++);
      p->value = random_normal<T>(p->value.rows(), p->value.cols(), 0.3, rng);
    }
  }
}

// Small model widths for the structural criteria; the learning criteria use
// the shipped toy preset unchanged.
RunConfig small_config() {
  RunConfig c = toy_preset();
  c.corpus.num_dialogues = 60;
  c.train.text_dialogues = 20;
  c.train.validate_every = 5;
  c.train.validation_limit = 4;
  for (auto* s : {&c.train.stage1, &c.train.pretrain, &c.train.stage2, &c.train.stage3}) {
    s->steps = 10;
    s->warmup_steps = 2;
    s->batch_size = 4;
  }
  return c;
}

// ---------------------------------------------------------------------------
// 1. Zero-B adapters leave the base LM unchanged.

template <typename T>
double neutrality_gap(PloraMode mode, int contexts, bool* nontrivial) {
  LmConfig lc = toy_preset().lm;
  lc.plora_mode = mode;
  LmConfig base_cfg = lc;
  base_cfg.plora_mode = PloraMode::kNone;
  ParamStore<T> s_adapted, s_base;
  PloraLm<T> adapted(s_adapted, lc, 11);
  PloraLm<T> base(s_base, base_cfg, 11);
  *nontrivial = true;
  for (auto m : {Modality::kEmotion, Modality::kText}) {
    for (const auto& pair : adapted.adapters(m)) {
      *nontrivial = *nontrivial && pair.b->value.isZero(0) && !pair.a->value.isZero(0);
    }
  }
  Rng rng(101);
  const int vocab = Vocabulary().size();
  double worst = 0.0;
  for (int k = 0; k < contexts; ++k) {
    const int n = 4 + static_cast<int>(rng() % 60);
    std::vector<int> ids(static_cast<std::size_t>(n));
    for (auto& id : ids) id = static_cast<int>(rng() % static_cast<std::uint64_t>(vocab));
    const auto tags = random_tags(n, rng);
    ag::Tape<T> t(false);
    Mat<T> emb = adapted.embed_tokens(t, ids).value();
    const Mat<T> speech = random_normal<T>(n, lc.dim, 1.0, rng);
    for (int p = 0; p < n; ++p) {
      if (tags[static_cast<std::size_t>(p)] == Modality::kEmotion) emb.row(p) = speech.row(p);
    }
    const Mat<T> a = adapted.forward(t, t.constant(emb), tags).value();
    const Mat<T> b = base.forward(t, t.constant(emb), tags).value();
    worst = std::max(worst, static_cast<double>((a - b).cwiseAbs().maxCoeff()));
  }
  return worst;
}

Outcome adapter_neutrality() {
  bool ok64 = false, ok32 = false, ok_single = false;
  const double g64 = neutrality_gap<double>(PloraMode::kMultiple, 100, &ok64);
  const double g32 = neutrality_gap<float>(PloraMode::kMultiple, 100, &ok32);
  const double gs = neutrality_gap<double>(PloraMode::kSingleLora, 100, &ok_single);
  const bool pass = ok64 && ok32 && ok_single && g64 == 0.0 && gs == 0.0 && g32 <= 1e-12;
  return {pass, "100 contexts, max |adapted - base| 64-bit " + sci(g64) + ", 32-bit " + sci(g32) +
                    ", single-LoRA 64-bit " + sci(gs) +
                    (ok64 && ok32 ? "" : ", adapters not zero-B/nonzero-A at init")};
}

// ---------------------------------------------------------------------------
// 2. Routing exclusivity by central differences.

struct RoutingCount {
  long zero_checks = 0;     // cross-route entries with exactly zero numerical gradient
  long violations = 0;      // cross-route entries with a nonzero numerical gradient
  long live_same = 0;       // same-route entries with a nonzero numerical gradient
};

// Central differences of the rows selected by `rows` w.r.t. every entry of
// every tensor in `params`.
template <typename F>
void central_differences(const std::vector<Param<double>*>& params, const std::vector<int>& rows,
                         F&& forward, bool expect_zero, RoutingCount& c) {
  if (rows.empty()) return;
  const double h = 1e-4;
  for (auto* p : params) {
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      double& x = p->value.data()[i];
      const double saved = x;
      x = saved + h;
      const MatD up = forward();
      x = saved - h;
      const MatD down = forward();
      x = saved;
      double g = 0.0;
      for (int r : rows) g = std::max(g, ((up.row(r) - down.row(r)) / (2 * h)).cwiseAbs().maxCoeff());
      if (expect_zero) {
        (g == 0.0 ? c.zero_checks : c.violations)++;
      } else if (g > 0.0) {
        c.live_same++;
      }
    }
  }
}

std::vector<Param<double>*> adapter_params(const PloraLm<double>& lm, Modality m) {
  std::vector<Param<double>*> out;
  for (const auto& pair : lm.adapters(m)) {
    out.push_back(pair.a);
    out.push_back(pair.b);
  }
  return out;
}

Outcome routing_exclusivity() {
  LmConfig lc;
  lc.dim = 16;
  lc.heads = 2;
  lc.blocks = 2;
  lc.rank = 4;
  lc.max_positions = 64;
  ParamStore<double> store;
  PloraLm<double> lm(store, lc, 3);
  randomize_adapters(store, 50);
  RoutingCount proj_count, lm_count;
  Rng rng(202);
  long lm_rows = 0;
  for (int k = 0; k < 20; ++k) {
    const int n = 6 + static_cast<int>(rng() % 14);
    auto tags = random_tags(n, rng);
    const MatD x = random_normal<double>(n, lc.dim, 1.0, rng);
    // Projection level: the first adapted projection, every position.
    AdaptedProjection<double> proj;
    proj.base = nn::Linear<double>::make(store, "probe" + std::to_string(k), ParamGroup::kLmBase,
                                         lc.dim, lc.dim, true, 9);
    proj.emotion = lm.adapters(Modality::kEmotion).front();
    proj.text = lm.adapters(Modality::kText).front();
    auto proj_forward = [&] {
      ag::Tape<double> t(false);
      return MatD(plora_linear(t, t.constant(x), tags, proj, 4.0).value());
    };
    // LM level: positions whose causal prefix holds only their own modality.
    auto lm_forward = [&] {
      ag::Tape<double> t(false);
      return MatD(lm.forward(t, t.constant(x), tags).value());
    };
    for (Modality probe_m : {Modality::kText, Modality::kEmotion}) {
      const Modality other = probe_m == Modality::kText ? Modality::kEmotion : Modality::kText;
      std::vector<int> rows, prefix_rows;
      bool pure = true;
      for (int p = 0; p < n; ++p) {
        const bool mine = tags[static_cast<std::size_t>(p)] == probe_m;
        pure = pure && mine;
        if (mine) rows.push_back(p);
        if (mine && pure) prefix_rows.push_back(p);
      }
      const std::vector<Param<double>*> cross{proj.emotion->a, proj.emotion->b, proj.text->a,
                                              proj.text->b};
      const auto cross_proj = probe_m == Modality::kText
                                  ? std::vector<Param<double>*>{cross[0], cross[1]}
                                  : std::vector<Param<double>*>{cross[2], cross[3]};
      const auto same_proj = probe_m == Modality::kText
                                 ? std::vector<Param<double>*>{cross[2], cross[3]}
                                 : std::vector<Param<double>*>{cross[0], cross[1]};
      central_differences(cross_proj, rows, proj_forward, true, proj_count);
      central_differences(same_proj, rows, proj_forward, false, proj_count);
      lm_rows += static_cast<long>(prefix_rows.size());
      central_differences(adapter_params(lm, other), prefix_rows, lm_forward, true, lm_count);
    }
  }
  const bool pass = proj_count.violations == 0 && lm_count.violations == 0 &&
                    proj_count.zero_checks > 0 && lm_count.zero_checks > 0 &&
                    proj_count.live_same > 0;
  return {pass, "20 contexts; adapted projections: " + std::to_string(proj_count.zero_checks) +
                    " cross-route entries exactly 0, " + std::to_string(proj_count.violations) +
                    " nonzero (same-route live: " + std::to_string(proj_count.live_same) +
                    "); LM outputs at " + std::to_string(lm_rows) +
                    " single-modality-prefix positions: " + std::to_string(lm_count.zero_checks) +
                    " entries exactly 0, " + std::to_string(lm_count.violations) + " nonzero"};
}

// ---------------------------------------------------------------------------
// 3. Finite-difference gradient suite at 64-bit.

Outcome gradient_suite() {
  std::vector<std::string> parts;
  double worst_all = 0.0;
  auto record = [&](const std::string& what, double err, const std::string& name) {
    worst_all = std::max(worst_all, err);
    parts.push_back(what + " " + sci(err) + " (" + name + ")");
  };
  {
    EncoderConfig ec{.feature_dim = 10, .dim = 8, .layers = 2, .heads = 2};
    for (bool use_q : {true, false}) {
      EqFormerConfig qc;
      qc.num_query_tokens = 3;
      qc.query_dim = 8;
      qc.num_qformer_blocks = 1;
      qc.qformer_heads = 2;
      qc.tltr_heads = 2;
      qc.projection_out_dim = 6;
      qc.use_qformer = use_q;
      ParamStore<double> store;
      LayeredEncoder<double> enc(store, ec, 3);
      EqFormer<double> eq(store, qc, ec, 3);
      const MatD x = rnd(7, 10, 12);
      Mask mask(7, 1);
      mask[6] = 0;
      auto f = [&](ag::Tape<double>& t) {
        auto layers = enc.encode(t, x, mask);
        return testing::probe(eq.forward(t, layers, downsample_mask(mask)).embedding);
      };
      std::string worst;
      record(use_q ? "encoder+eqformer" : "encoder+eqformer(mean-pool)",
             testing::gradcheck_all(store, f, &worst, 6), worst);
    }
  }
  for (auto mode : {PloraMode::kMultiple, PloraMode::kSingleLora}) {
    LmConfig lc;
    lc.dim = 8;
    lc.heads = 2;
    lc.blocks = 2;
    lc.rank = 2;
    lc.max_positions = 32;
    lc.plora_mode = mode;
    ParamStore<double> store;
    PloraLm<double> lm(store, lc, 5);
    randomize_adapters(store, 40);
    Rng rng(22);
    const auto tags = random_tags(9, rng);
    const std::vector<int> tokens{2, 8, 15, 30, 9, 4, 11, 40, 3};
    const MatD extra = rnd(9, 8, 23, 0.5);
    Mask mask(9, 0);
    mask[6] = mask[7] = mask[8] = 1;
    auto f = [&](ag::Tape<double>& t) {
      auto emb = ag::add(lm.embed_tokens(t, tokens), t.constant(extra));
      return lm_loss(lm.forward(t, emb, tags), tokens, mask);
    };
    std::string worst;
    record(mode == PloraMode::kMultiple ? "plora_lm" : "plora_lm(single)",
           testing::gradcheck_all(store, f, &worst, 6), worst);
  }
  {
    AcousticConfig ac;
    ac.mel_bins = 6;
    ac.dim = 8;
    ac.heads = 2;
    ac.encoder_blocks = 1;
    ac.decoder_blocks = 1;
    ac.predictor_hidden = 6;
    ParamStore<double> store;
    AcousticModel<double> m(store, ac, 3);
    const std::vector<int> tokens{40, 52, 61};
    const auto tgt = acoustic_targets(tokens, 1, Emotion::kFear, Intensity::kStrong, 6);
    auto f = [&](ag::Tape<double>& t) {
      return m.loss(t, tokens, 1, Emotion::kFear, Intensity::kStrong, tgt).total;
    };
    std::string worst;
    record("acoustic", testing::gradcheck_all(store, f, &worst, 6), worst);
  }
  std::string detail = "worst relative error " + sci(worst_all) + ":";
  for (const auto& p : parts) detail += " " + p + ";";
  detail.pop_back();
  return {worst_all <= 1e-4, detail};
}

// ---------------------------------------------------------------------------
// 4. Checkpoint digest diff equals the freeze plan, stage by stage.

std::set<std::string> manifest_diff(const std::filesystem::path& a,
                                    const std::filesystem::path& b) {
  std::map<std::string, std::string> da, db;
  for (const auto& r : read_manifest(a).tensors) da[r.name] = r.digest;
  for (const auto& r : read_manifest(b).tensors) db[r.name] = r.digest;
  return digest_diff(da, db);
}

std::string group_list(const GroupSet& g) {
  std::string out;
  for (auto x : g) out += (out.empty() ? "" : "+") + std::string(group_name(x));
  return out.empty() ? "-" : out;
}

Outcome freezing_contracts() {
  const RunConfig cfg = small_config();
  const Corpus corpus = generate_corpus(cfg.corpus);
  const auto dir = testing::scratch_dir("acceptance_freeze");
  ReasoningModel<float> m(cfg);
  AcousticStack<float> a(cfg);
  const Vocabulary& v = m.vocab();
  SaveRequest<float> init;
  init.stage = "init";
  save_checkpoint(dir / "init", m.store(), init, v);
  save_checkpoint(dir / "init3", a.store(), init, Vocabulary());

  struct Row {
    Stage stage;
    std::filesystem::path before, after;
    GroupSet plan;
    std::set<std::string> expected;
  };
  std::vector<Row> rows;
  auto run = [&](Stage s, auto&& train, ParamStore<float>& store, const std::string& before) {
    auto r = train();
    save_stage(dir / std::string(stage_tag(s)), store, r, cfg, v);
    rows.push_back({s, dir / before, dir / std::string(stage_tag(s)), r.plan,
                    tensor_names(store, r.plan)});
  };
  run(Stage::kStage1, [&] { return train_stage1(m, corpus); }, m.store(), "init");
  run(Stage::kPretrain, [&] { return pretrain_stage2_text(m, corpus); }, m.store(), "stage1");
  run(Stage::kStage2, [&] { return train_stage2(m, corpus); }, m.store(), "pretrain");
  run(Stage::kStage3, [&] { return train_stage3(a, cfg, corpus); }, a.store(), "init3");

  using G = ParamGroup;
  const std::map<Stage, GroupSet> contract = {
      {Stage::kStage1, {G::kTltr, G::kQformer, G::kProjection, G::kPloraE, G::kPloraT}},
      {Stage::kPretrain, {G::kPloraT}},
      {Stage::kStage2, {G::kQformer, G::kProjection, G::kPloraE, G::kPloraT}},
      {Stage::kStage3, {G::kAcoustic}}};
  bool pass = true;
  std::string detail;
  for (const auto& r : rows) {
    const auto diff = manifest_diff(r.before, r.after);
    const bool ok = diff == r.expected && r.plan == contract.at(r.stage) && !diff.empty();
    pass = pass && ok;
    detail += std::string(stage_tag(r.stage)) + " " + std::to_string(diff.size()) + "/" +
              std::to_string(r.expected.size()) + " tensors [" + group_list(r.plan) + "] " +
              (ok ? "exact" : "MISMATCH") + "; ";
  }
  detail.resize(detail.size() - 2);
  return {pass, detail};
}

// ---------------------------------------------------------------------------
// 5. Fixed query count.

Outcome fixed_query_contract() {
  const RunConfig toy = toy_preset();
  ParamStore<float> store;
  LayeredEncoder<float> enc(store, toy.effective_encoder(), 1);
  EqFormer<float> eq(store, toy.effective_eqformer(), toy.effective_encoder(), 1);
  Rng rng(5);
  int bad = 0;
  for (int frames = 1; frames <= 200; ++frames) {
    const MatF x = random_normal<float>(frames, toy.corpus.feature_dim, 1.0, rng);
    ag::Tape<float> t(false);
    const auto out = eq.forward(t, enc.encode_layers(x));
    bad += out.embedding.rows() != toy.eqformer.num_query_tokens ||
           out.embedding.cols() != toy.lm.dim;
  }
  const RunConfig paper = preset("paper");
  const auto pq = paper.effective_eqformer();
  EncoderConfig pe = paper.effective_encoder();
  ParamStore<float> ps;
  EqFormer<float> peq(ps, pq, pe, 1);
  ag::Tape<float> t(false);
  std::vector<ag::Var<float>> layers;
  for (int l = 0; l < 3; ++l) layers.push_back(t.constant(random_normal<float>(7, pe.dim, 1.0, rng)));
  const auto out = peq.forward(t, layers, Mask(7, 1));
  const bool paper_ok = out.embedding.rows() == 25 && pq.num_query_tokens == 25;
  return {bad == 0 && paper_ok,
          "toy: " + std::to_string(200 - bad) + "/200 lengths give " +
              std::to_string(toy.eqformer.num_query_tokens) + " rows; paper preset: " +
              std::to_string(out.embedding.rows()) + "x" + std::to_string(out.embedding.cols())};
}

// ---------------------------------------------------------------------------
// 6. Metrics against oracles and hand examples.

Outcome metrics_oracle() {
  using namespace metrics;
  Rng rng(1234);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int k = 2 + static_cast<int>(rng() % 7);
    const int n = 1 + static_cast<int>(rng() % 40);
    std::vector<int> refs(static_cast<std::size_t>(n)), preds(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      refs[static_cast<std::size_t>(i)] = static_cast<int>(rng() % static_cast<std::uint64_t>(k));
      preds[static_cast<std::size_t>(i)] = static_cast<int>(rng() % static_cast<std::uint64_t>(k));
    }
    const auto r = classification_metrics(refs, preds, k);
    const auto o = testing::naive_classification(refs, preds, k);
    worst = std::max({worst, std::abs(r.wa - o.wa), std::abs(r.ua - o.ua),
                      std::abs(r.macro_f1 - o.f1)});
  }
  std::vector<std::string> failed;
  auto check = [&](const char* name, bool ok) {
    if (!ok) failed.push_back(name);
  };
  MatD a(1, 3), b(1, 3);
  a << 9.0, 0.0, 0.0;
  b << -2.0, 3.0, 4.0;
  const double k = 10.0 / std::log(10.0) * std::sqrt(2.0);
  check("mcd", std::abs(mcd(a, b).value - k * 5.0) <= 1e-12);
  check("mcd-identity", mcd(a, a).value == 0.0);
  check("ddur", std::abs(ddur({1.0, 2.0}, {1.5, 1.8}).value - 0.35) <= 1e-15);
  check("wer", std::abs(word_error_rate({1, 2, 3}, {1, 9, 3, 4}).value - 2.0 / 3.0) <= 1e-15);
  check("wer-empty-hyp", word_error_rate({1, 2, 3}, {}).value == 1.0);
  const auto cm = classification_metrics({0, 0, 1}, {0, 1, 1}, 2);
  check("classification-hand", std::abs(cm.ua - 0.75) <= 1e-15);
  const auto empty_ddur = ddur({}, {});
  check("ddur-empty-flag", !empty_ddur.defined && empty_ddur.has_flag("empty_input"));
  const auto wer_empty = word_error_rate({}, {4, 5});
  check("wer-empty-ref-flag", wer_empty.has_flag("empty_reference"));
  PitchTrack silent{{0, 0}, {0, 0}, {0, 0}};
  const auto f0 = f0_metrics(silent, silent);
  check("f0-unvoiced-flag", !f0.rmse_f0.defined && f0.rmse_f0.has_flag("no_mutually_voiced_frames") &&
                                f0.f1_vuv.has_flag("no_voiced_frames") &&
                                to_json(f0.rmse_f0)["value"].is_null());
  std::string detail = "1000 random cases, max |impl - oracle| " + sci(worst) + "; hand examples " +
                       (failed.empty() ? "exact" : "FAILED:");
  for (const auto& f : failed) detail += " " + f;
  detail += "; degenerate inputs flagged";
  return {worst <= 1e-12 && failed.empty(), detail};
}

// ---------------------------------------------------------------------------
// 7 and 8. Toy-preset learning and the ablation grid over three seeds.

constexpr int kSeeds[] = {1, 2, 3};

struct SeedResult {
  std::vector<PipelineResult> rows;
  double full_cpu_seconds = 0.0;  // stage 1 + pretrain + stage 2 + stage 3
};

const std::map<int, SeedResult>& grid_results() {
  static std::map<int, SeedResult> cache;
  if (!cache.empty()) return cache;
  for (int seed : kSeeds) {
    RunConfig base = toy_preset();
    base.seed = static_cast<std::uint64_t>(seed);
    base.corpus.seed = static_cast<std::uint64_t>(seed);
    const Corpus corpus = generate_corpus(base.corpus);
    std::map<std::string, std::map<std::string, MatF>> stage1_cache;
    SeedResult& sr = cache[seed];
    for (const auto& cell : default_ablation_grid()) {
      RunConfig cfg = base;
      cfg.ablation = cell.flags;
      const double c0 = cpu_seconds();
      sr.rows.push_back(run_reasoning_pipeline<float>(cfg, corpus, cell.name, &stage1_cache));
      const double spent = cpu_seconds() - c0;
      const auto& t = sr.rows.back().test;
      std::fprintf(stderr, "  seed %d %-16s emotion WA %s intensity WA %s (%.0fs cpu)\n", seed,
                   cell.name.c_str(), fmt(t.emotion.wa).c_str(), fmt(t.intensity.wa).c_str(),
                   spent);
      if (cell.name == "full") {
        sr.full_cpu_seconds = spent;
        const double s0 = cpu_seconds();
        AcousticStack<float> a(cfg);
        train_stage3(a, cfg, corpus);
        sr.full_cpu_seconds += cpu_seconds() - s0;
      }
    }
  }
  return cache;
}

const PipelineResult& row(const SeedResult& s, const std::string& name) {
  for (const auto& r : s.rows) {
    if (r.name == name) return r;
  }
  fail(ErrorKind::kConfig, "no ablation row " + name);
}

Outcome synthetic_learning() {
  bool pass = true;
  std::string detail;
  for (const auto& [seed, sr] : grid_results()) {
    const auto& full = row(sr, "full");
    const double s1 = full.stage1_val ? full.stage1_val->emotion.wa : 0.0;
    const double e = full.test.emotion.wa, i = full.test.intensity.wa;
    const bool ok = s1 >= 0.95 && e >= 0.90 && i >= 0.85 && sr.full_cpu_seconds <= 900.0;
    pass = pass && ok;
    detail += "seed " + std::to_string(seed) + ": stage-1 " + fmt(s1) + ", emotion " + fmt(e) +
              ", intensity " + fmt(i) + ", " + fmt(sr.full_cpu_seconds / 60.0, 1) + " cpu-min; ";
  }
  detail += "thresholds 0.95/0.90/0.85, 15 cpu-min";
  return {pass, detail};
}

Outcome directional_ablation() {
  bool pass = true;
  std::string detail;
  for (const auto& [seed, sr] : grid_results()) {
    const double full = row(sr, "full").test.emotion.wa;
    const double no_s1 = row(sr, "w/o stage 1").test.emotion.wa;
    const double no_pt = row(sr, "w/o pre-training").test.emotion.wa;
    const double no_q = row(sr, "w/o Q-former").test.emotion.wa;
    double other_worst = 1.0;
    for (const auto& r : sr.rows) {
      if (r.name != "full" && r.name != "w/o Q-former") {
        other_worst = std::min(other_worst, r.test.emotion.wa);
      }
    }
    const bool s1_ok = full - no_s1 >= 0.03;
    const bool pt_ok = full - no_pt >= 0.03;
    const bool q_ok = other_worst - no_q >= 0.03;
    pass = pass && s1_ok && pt_ok && q_ok;
    detail += "seed " + std::to_string(seed) + ": full " + fmt(full);
    for (const auto& r : sr.rows) {
      if (r.name != "full") detail += ", " + r.name + " " + fmt(r.test.emotion.wa);
    }
    detail += std::string(" [stage1 gap ") + (s1_ok ? "ok" : "<0.03") + ", pretrain gap " +
              (pt_ok ? "ok" : "<0.03") + ", Q-former worst " + (q_ok ? "ok" : "no") + "]; ";
  }
  detail.resize(detail.size() - 2);
  return {pass, detail};
}

// ---------------------------------------------------------------------------
// 9. Determinism and resumability.

std::string checkpoint_digest(const std::filesystem::path& dir) {
  std::string all;
  for (const auto& r : read_manifest(dir).tensors) all += r.name + ":" + r.digest + "\n";
  return sha256_hex(all.data(), all.size());
}

// Full chain; stage 2 and stage 3 optionally interrupted and resumed from disk.
std::map<std::string, std::string> chain(const RunConfig& cfg, const Corpus& corpus,
                                         const std::filesystem::path& dir, bool interrupt) {
  std::map<std::string, std::string> out;
  ReasoningModel<float> m(cfg);
  auto s1 = train_stage1(m, corpus);
  save_stage(dir / "stage1", m.store(), s1, cfg, m.vocab());
  out["stage1"] = checkpoint_digest(dir / "stage1");
  auto pt = pretrain_stage2_text(m, corpus);
  save_stage(dir / "pretrain", m.store(), pt, cfg, m.vocab());
  out["pretrain"] = checkpoint_digest(dir / "pretrain");
  TrainOptions half;
  half.stop_after = cfg.train.stage2.steps / 2;
  if (interrupt) {
    auto part = train_stage2(m, corpus, half);
    save_stage(dir / "stage2-part", m.store(), part, cfg, m.vocab());
    ReasoningModel<float> fresh(cfg);
    auto opt = resume_from(dir / "stage2-part", fresh.store(), cfg.train.stage2, fresh.vocab());
    auto rest = train_stage2(fresh, corpus, {}, std::move(opt));
    save_stage(dir / "stage2", fresh.store(), rest, cfg, fresh.vocab());
  } else {
    auto s2 = train_stage2(m, corpus);
    save_stage(dir / "stage2", m.store(), s2, cfg, m.vocab());
  }
  out["stage2"] = checkpoint_digest(dir / "stage2");
  AcousticStack<float> a(cfg);
  if (interrupt) {
    half.stop_after = cfg.train.stage3.steps / 2;
    auto part = train_stage3(a, cfg, corpus, half);
    save_stage(dir / "stage3-part", a.store(), part, cfg, Vocabulary());
    AcousticStack<float> fresh(cfg);
    auto opt = resume_from(dir / "stage3-part", fresh.store(), cfg.train.stage3, Vocabulary());
    auto rest = train_stage3(fresh, cfg, corpus, {}, std::move(opt));
    save_stage(dir / "stage3", fresh.store(), rest, cfg, Vocabulary());
  } else {
    auto s3 = train_stage3(a, cfg, corpus);
    save_stage(dir / "stage3", a.store(), s3, cfg, Vocabulary());
  }
  out["stage3"] = checkpoint_digest(dir / "stage3");
  return out;
}

Outcome determinism() {
  const RunConfig cfg = small_config();
  const Corpus c1 = generate_corpus(cfg.corpus);
  const Corpus c2 = generate_corpus(cfg.corpus);
  const auto a = chain(cfg, c1, testing::scratch_dir("acceptance_det_a"), false);
  const auto b = chain(cfg, c2, testing::scratch_dir("acceptance_det_b"), false);
  const auto r = chain(cfg, c1, testing::scratch_dir("acceptance_det_r"), true);
  bool pass = true;
  std::string detail;
  for (const auto& [stage, d] : a) {
    const bool same = b.at(stage) == d;
    const bool resumed = r.at(stage) == d;
    pass = pass && same && resumed;
    detail += stage + " " + d.substr(0, 12) + (same ? " repeat=" : " repeat!=") +
              (resumed ? "resume=" : "resume!=") + "; ";
  }
  detail.resize(detail.size() - 2);
  return {pass, detail};
}

// ---------------------------------------------------------------------------
// 10. Learning-rate schedule endpoints.

Outcome lr_schedule() {
  const RunConfig paper = preset("paper");
  bool pass = true;
  std::string detail;
  for (const auto& [name, oc] :
       std::vector<std::pair<std::string, OptimConfig>>{{"stage1", paper.train.stage1},
                                                        {"stage2", paper.train.stage2},
                                                        {"stage3", paper.train.stage3}}) {
    const double warm = lr_at(3000, oc);
    const double floor = lr_at(oc.steps, oc);
    const bool ok = std::abs(warm - 3e-5) <= 1e-12 && std::abs(floor - 1e-5) <= 1e-12;
    pass = pass && ok;
    detail += name + " lr(3000)=" + sci(warm) + " lr(" + std::to_string(oc.steps) +
              ")=" + sci(floor) + "; ";
  }
  detail.resize(detail.size() - 2);
  return {pass, detail};
}

}  // namespace
}  // namespace jelly

int main(int argc, char** argv) {
  using namespace jelly;
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> all = {
      {1, "adapter neutrality", adapter_neutrality},
      {2, "routing exclusivity", routing_exclusivity},
      {3, "gradient suite", gradient_suite},
      {4, "freezing contracts", freezing_contracts},
      {5, "fixed query count", fixed_query_contract},
      {6, "metrics oracle equivalence", metrics_oracle},
      {7, "end-to-end synthetic learning", synthetic_learning},
      {8, "directional ablation", directional_ablation},
      {9, "determinism and resumability", determinism},
      {10, "learning-rate schedule", lr_schedule},
  };
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
  int failures = 0;
  for (const auto& c : all) {
    if (!wanted.empty() && !wanted.contains(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failures += !o.pass;
    std::printf("criterion %2d %s %s: %s (%.1fs)\n", c.id, o.pass ? "PASS" : "FAIL", c.name,
                o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
