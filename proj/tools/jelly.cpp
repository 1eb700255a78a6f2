// Copyright 2026 The jelly-lab Authors
// SPDX-License-Identifier: Apache-2.0

// jelly: corpus generation, staged training, inference, evaluation and
// ablation sweeps.
//
// Exit codes: 0 ok, 1 internal error, 2 configuration or malformed input,
// 3 I/O error, 4 incompatible checkpoint, 5 training divergence,
// 6 ablation ordering violated.

#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "jelly/pipeline.hpp"

namespace fs = std::filesystem;
using namespace jelly;
using T = float;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInternal = 1;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitIncompatible = 4;
constexpr int kExitDivergence = 5;
constexpr int kExitAblation = 6;

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::kConfig:
    case ErrorKind::kFormat:
    case ErrorKind::kShape:
    case ErrorKind::kOverflow:
    case ErrorKind::kDomain: return kExitConfig;
    case ErrorKind::kIo: return kExitIo;
    case ErrorKind::kIncompatible: return kExitIncompatible;
    case ErrorKind::kDivergence: return kExitDivergence;
  }
  return kExitInternal;
}

RunConfig read_config(const std::string& path) {
  return path.empty() ? toy_preset() : load_config(path);
}

fs::path or_default(const std::string& given, const RunConfig& cfg, const char* leaf) {
  return given.empty() ? cfg.root() / leaf : fs::path(given);
}

// Config snapshot embedded in a checkpoint.
RunConfig checkpoint_config(const fs::path& dir) {
  return from_json(read_manifest(dir).config);
}

// One digest for the whole checkpoint: sha256 over the per-tensor digests.
std::string combined_digest(const std::map<std::string, std::string>& digests) {
  std::string all;
  for (const auto& [name, d] : digests) all += name + ":" + d + "\n";
  return sha256_hex(all.data(), all.size());
}

std::string groups_of(const ParamStore<T>& store, const std::set<std::string>& names) {
  std::set<std::string> g;
  for (const auto& n : names) g.insert(std::string(group_name(store.find(n)->group)));
  std::string out;
  for (const auto& s : g) out += (out.empty() ? "" : ",") + s;
  return out.empty() ? "-" : out;
}

void report_stage(const StageRun<T>& run, const ParamStore<T>& store, const fs::path& out,
                  TrainLog& log) {
  std::vector<std::string> updated(run.changed.begin(), run.changed.end());
  log.write({{"stage", stage_tag(run.stage)},
             {"event", "digest_diff"},
             {"updated", updated},
             {"audit_ok", run.audit_ok()}});
  std::printf("stage %s: %ld steps\n", std::string(stage_tag(run.stage)).c_str(), run.steps_done);
  if (!run.losses.empty()) std::printf("final loss: %.6f\n", run.losses.back());
  if (!run.validations.empty()) {
    const auto& v = run.validations.back();
    std::printf("validation emotion WA: %.4f  intensity WA: %.4f  (best emotion WA %.4f)\n",
                v.emotion_wa, v.intensity_wa, run.best_wa);
  }
  std::printf("updated tensors: %zu (groups: %s)\n", run.changed.size(),
              groups_of(store, run.changed).c_str());
  for (const auto& n : updated) std::printf("  updated %s\n", n.c_str());
  std::printf("freeze audit: %s\n", run.audit_ok() ? "ok" : "VIOLATED");
  std::printf("checkpoint: %s\n", out.string().c_str());
  std::printf("digest: %s\n", combined_digest(run.digests_after).c_str());
  if (!run.audit_ok()) {
    throw std::logic_error("freeze audit failed: updated tensors differ from the freeze plan");
  }
}

struct TrainArgs {
  std::string config, data, out, resume;
  std::vector<std::string> init;
  long stop_after = -1;
  bool allow_cold_start = false;
};

void add_train_options(CLI::App* cmd, TrainArgs& a, bool with_init) {
  cmd->add_option("--config", a.config, "run-config JSON (default: toy preset)");
  cmd->add_option("--data", a.data, "corpus directory (default: $JELLY_LAB_HOME/data)");
  cmd->add_option("--out", a.out, "checkpoint directory");
  cmd->add_option("--resume", a.resume, "continue from a checkpoint of the same stage");
  cmd->add_option("--stop-after", a.stop_after, "stop after this many total steps");
  if (with_init) cmd->add_option("--init", a.init, "initializing checkpoint(s)");
}

template <typename Body>
int run_stage_command(const TrainArgs& a, Stage stage, Body&& body) {
  const RunConfig cfg = read_config(a.config);
  const auto data = or_default(a.data, cfg, "data");
  const auto out = or_default(a.out, cfg, std::string(stage_tag(stage)).c_str());
  const Corpus corpus = load_corpus(data);
  fs::create_directories(out);
  TrainLog log(out / "train.log.jsonl");
  TrainOptions opt;
  opt.log = &log;
  opt.stop_after = a.stop_after;
  opt.divergence_dir = out / "diverged";
  body(cfg, corpus, out, opt, log);
  return kExitOk;
}

void load_resume(const TrainArgs& a, ParamStore<T>& store, const OptimConfig& oc,
                 const Vocabulary& vocab, Stage stage, std::unique_ptr<AdamW<T>>& opt) {
  if (a.resume.empty()) return;
  const auto info = read_manifest(a.resume);
  require(info.stage == stage_tag(stage), ErrorKind::kIncompatible,
          "--resume: checkpoint is from stage '" + info.stage + "'");
  opt = resume_from(a.resume, store, oc, vocab);
}

int cmd_gen_data(const std::string& config, const std::string& out_arg) {
  const RunConfig cfg = read_config(config);
  const auto out = or_default(out_arg, cfg, "data");
  const Corpus c = generate_corpus(cfg.corpus);
  save_corpus(c, out);
  std::printf("train: %zu\nval: %zu\ntest: %zu\nout: %s\n", c.train.size(), c.val.size(),
              c.test.size(), out.string().c_str());
  return kExitOk;
}

int cmd_train_stage1(const TrainArgs& a) {
  return run_stage_command(a, Stage::kStage1, [&](const RunConfig& cfg, const Corpus& corpus,
                                                  const fs::path& out, TrainOptions& opt,
                                                  TrainLog& log) {
    ReasoningModel<T> m(cfg);
    std::unique_ptr<AdamW<T>> resume;
    load_resume(a, m.store(), cfg.train.stage1, m.vocab(), Stage::kStage1, resume);
    auto run = train_stage1(m, corpus, opt, std::move(resume));
    save_stage(out, m.store(), run, cfg, m.vocab());
    report_stage(run, m.store(), out, log);
  });
}

int cmd_pretrain_stage2(const TrainArgs& a) {
  return run_stage_command(a, Stage::kPretrain, [&](const RunConfig& cfg, const Corpus& corpus,
                                                    const fs::path& out, TrainOptions& opt,
                                                    TrainLog& log) {
    ReasoningModel<T> m(cfg);
    require(a.init.size() <= 1, ErrorKind::kConfig, "pretrain-stage2: at most one --init");
    if (!a.init.empty() && a.resume.empty()) load_checkpoint(a.init.front(), m.store(), m.vocab());
    std::unique_ptr<AdamW<T>> resume;
    load_resume(a, m.store(), cfg.train.pretrain, m.vocab(), Stage::kPretrain, resume);
    auto run = pretrain_stage2_text(m, corpus, opt, std::move(resume));
    save_stage(out, m.store(), run, cfg, m.vocab());
    report_stage(run, m.store(), out, log);
  });
}

int cmd_train_stage2(const TrainArgs& a) {
  return run_stage_command(a, Stage::kStage2, [&](const RunConfig& cfg, const Corpus& corpus,
                                                  const fs::path& out, TrainOptions& opt,
                                                  TrainLog& log) {
    ReasoningModel<T> m(cfg);
    std::optional<fs::path> s1, pt;
    for (const auto& dir : a.init) {
      const auto info = read_manifest(dir);
      if (info.stage == "stage1") {
        s1 = dir;
      } else if (info.stage == "pretrain") {
        pt = dir;
      } else {
        fail(ErrorKind::kIncompatible,
             "--init " + dir + ": expected a stage1 or pretrain checkpoint, got '" + info.stage +
                 "'");
      }
    }
    if (a.resume.empty()) {
      require((s1 && pt) || a.allow_cold_start, ErrorKind::kConfig,
              "train-stage2: needs --init from both a stage1 and a pretrain checkpoint "
              "(pass --allow-cold-start to train without them)");
      if (s1) load_checkpoint(*s1, m.store(), m.vocab());
      if (pt) {
        LoadOptions lo;
        lo.only = adapter_groups(cfg.ablation.plora_mode, false, true);
        load_checkpoint(*pt, m.store(), m.vocab(), lo);
      }
    }
    std::unique_ptr<AdamW<T>> resume;
    load_resume(a, m.store(), cfg.train.stage2, m.vocab(), Stage::kStage2, resume);
    auto run = train_stage2(m, corpus, opt, std::move(resume));
    save_stage(out, m.store(), run, cfg, m.vocab());
    report_stage(run, m.store(), out, log);
    const auto test = evaluate_dialogues(m, corpus.test, AssemblyMode::kInferSpeechOnly);
    std::printf("test emotion WA: %.4f  UA: %.4f  F1: %.4f\n", test.emotion.wa, test.emotion.ua,
                test.emotion.macro_f1);
    std::printf("test intensity WA: %.4f  UA: %.4f  F1: %.4f\n", test.intensity.wa,
                test.intensity.ua, test.intensity.macro_f1);
    std::printf("unparseable: %ld\n", test.unparseable);
  });
}

int cmd_train_stage3(const TrainArgs& a) {
  return run_stage_command(a, Stage::kStage3, [&](const RunConfig& cfg, const Corpus& corpus,
                                                  const fs::path& out, TrainOptions& opt,
                                                  TrainLog& log) {
    AcousticStack<T> s(cfg);
    std::unique_ptr<AdamW<T>> resume;
    load_resume(a, s.store(), cfg.train.stage3, Vocabulary(), Stage::kStage3, resume);
    auto run = train_stage3(s, cfg, corpus, opt, std::move(resume));
    save_stage(out, s.store(), run, cfg, Vocabulary());
    report_stage(run, s.store(), out, log);
  });
}

nlohmann::json label_record(const std::string& id, Emotion e, Intensity i) {
  return {{"id", id}, {"emotion", std::string(to_string(e))},
          {"intensity", std::string(to_string(i))}};
}

std::vector<Dialogue> read_dialogue_manifest(const fs::path& path, const Vocabulary& vocab) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::kFormat, path.string() + ": malformed dialogue manifest: " + e.what());
  }
  nlohmann::json arr = j.is_object() && j.contains("dialogues") ? j.at("dialogues")
                       : j.is_array()                           ? j
                                                                : nlohmann::json::array({j});
  return load_dialogues(arr, path.parent_path(), vocab);
}

int cmd_infer(const std::string& stage2, const std::string& stage3, const std::string& dialogue,
              const std::string& data, const std::string& split, const std::string& out_arg) {
  require(!stage2.empty() && !stage3.empty(), ErrorKind::kConfig,
          "infer: --stage2 and --stage3 are required");
  const RunConfig rcfg = checkpoint_config(stage2);
  const RunConfig acfg = checkpoint_config(stage3);
  ReasoningModel<T> m(rcfg);
  load_checkpoint(stage2, m.store(), m.vocab());
  AcousticStack<T> a(acfg);
  load_checkpoint(stage3, a.store(), Vocabulary());
  std::vector<Dialogue> ds;
  if (!dialogue.empty()) {
    ds = read_dialogue_manifest(dialogue, m.vocab());
  } else {
    const Corpus c = load_corpus(or_default(data, rcfg, "data"));
    ds = split == "train" ? c.train : split == "val" ? c.val : c.test;
    require(split == "train" || split == "val" || split == "test", ErrorKind::kConfig,
            "infer: --split must be train, val or test");
  }
  require(!ds.empty(), ErrorKind::kConfig, "infer: no dialogues to process");
  const auto out = or_default(out_arg, rcfg, "infer");
  fs::create_directories(out / "mel");
  std::ostringstream report, preds, refs;
  long unparseable = 0;
  for (const auto& d : ds) {
    auto r = infer(m, a.model(), d);
    const auto& u = d.utterances[static_cast<std::size_t>(d.current_turn)];
    refs << label_record(d.dialogue_id, u.emotion, u.intensity).dump() << '\n';
    nlohmann::json rec{{"dialogue_id", r.dialogue_id},
                       {"current_turn", r.current_turn},
                       {"context_length", r.context_length},
                       {"answer", m.vocab().detokenize(r.raw_ids)}};
    if (r.parsed) {
      const auto mel = out / "mel" / (d.dialogue_id + ".jlyf");
      io::write_frames(mel, r.synthesis.mel);
      rec["outcome"] = "ok";
      rec["emotion"] = std::string(to_string(r.label.emotion));
      rec["intensity"] = std::string(to_string(r.label.intensity));
      rec["mel"] = mel.string();
      rec["frames"] = r.synthesis.frames();
      preds << label_record(d.dialogue_id, r.label.emotion, r.label.intensity).dump() << '\n';
    } else {
      ++unparseable;
      rec["outcome"] = "UNPARSEABLE";
      preds << nlohmann::json{{"id", d.dialogue_id}, {"unparseable", true}}.dump() << '\n';
    }
    report << rec.dump() << '\n';
    std::printf("%s\n", rec.dump().c_str());
  }
  io::write_text(out / "report.jsonl", report.str());
  io::write_text(out / "predictions.jsonl", preds.str());
  io::write_text(out / "references.jsonl", refs.str());
  std::printf("dialogues: %zu  unparseable: %ld\nout: %s\n", ds.size(), unparseable,
              out.string().c_str());
  return kExitOk;
}

std::vector<nlohmann::json> read_jsonl(const fs::path& path) {
  std::vector<nlohmann::json> out;
  std::istringstream in(io::read_text(path));
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::parse_error& e) {
      fail(ErrorKind::kFormat, path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

int cmd_eval(const std::string& pred, const std::string& ref, const std::string& which,
             const std::string& out) {
  const auto p = read_jsonl(pred);
  const auto r = read_jsonl(ref);
  std::map<std::string, nlohmann::json> by_id;
  for (const auto& x : p) {
    require(x.contains("id"), ErrorKind::kFormat, pred + ": record without \"id\"");
    by_id[x.at("id").get<std::string>()] = x;
  }
  std::vector<metrics::MetricOutcome> report;
  std::set<std::string> wanted;
  std::stringstream ss(which);
  for (std::string w; std::getline(ss, w, ',');) wanted.insert(w);
  for (const auto& w : wanted) {
    require(w == "classification" || w == "wer", ErrorKind::kConfig,
            "eval: unknown metric family '" + w + "'");
  }
  if (wanted.contains("classification")) {
    std::vector<LabelPrediction> rows;
    for (const auto& x : r) {
      try {
        const auto id = x.at("id").get<std::string>();
        LabelPrediction lp;
        lp.id = id;
        lp.reference = {parse_emotion(x.at("emotion").get<std::string>()),
                        parse_intensity(x.at("intensity").get<std::string>())};
        auto it = by_id.find(id);
        if (it != by_id.end() && !it->second.value("unparseable", false)) {
          lp.parsed = true;
          lp.predicted = {parse_emotion(it->second.at("emotion").get<std::string>()),
                          parse_intensity(it->second.at("intensity").get<std::string>())};
        }
        rows.push_back(lp);
      } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::kFormat, std::string("eval: malformed label record: ") + e.what());
      } catch (const Error& e) {
        fail(ErrorKind::kFormat, std::string("eval: ") + e.what());
      }
    }
    const auto s = summarize(rows);
    auto add = [&](const std::string& name, double v) {
      metrics::MetricOutcome m;
      m.name = name;
      m.value = v;
      m.count = s.count;
      if (s.unparseable > 0) m.flags.push_back("unparseable=" + std::to_string(s.unparseable));
      report.push_back(m);
    };
    add("emotion_wa", s.emotion.wa);
    add("emotion_ua", s.emotion.ua);
    add("emotion_f1", s.emotion.macro_f1);
    add("intensity_wa", s.intensity.wa);
    add("intensity_ua", s.intensity.ua);
    add("intensity_f1", s.intensity.macro_f1);
  }
  if (wanted.contains("wer")) {
    const Vocabulary vocab;
    double errors = 0.0;
    long words = 0;
    for (const auto& x : r) {
      const auto id = x.at("id").get<std::string>();
      require(x.contains("transcript"), ErrorKind::kFormat, ref + ": record without transcript");
      const auto rt = vocab.tokenize(x.at("transcript").get<std::string>());
      auto it = by_id.find(id);
      const auto ht = it == by_id.end() ? std::vector<int>{}
                                        : vocab.tokenize(it->second.value("transcript", ""));
      errors += static_cast<double>(metrics::edit_distance(rt, ht));
      words += static_cast<long>(rt.size());
    }
    metrics::MetricOutcome m;
    m.name = "wer";
    m.count = words;
    if (words == 0) {
      m.flags.push_back("empty_reference");
      m.value = errors;
    } else {
      m.value = errors / static_cast<double>(words);
    }
    report.push_back(m);
  }
  std::ostringstream lines;
  for (const auto& m : report) lines << metrics::to_json(m).dump() << '\n';
  if (!out.empty()) io::write_text(out, lines.str());
  std::cout << lines.str();
  return kExitOk;
}

std::string fmt(double v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(3) << v;
  return s.str();
}

int cmd_ablate(const std::string& config, const std::string& data, const std::string& grid,
               const std::string& out_arg) {
  const RunConfig base = read_config(config);
  const Corpus corpus = data.empty() ? generate_corpus(base.corpus) : load_corpus(data);
  auto cells = default_ablation_grid();
  if (!grid.empty() && grid != "default") {
    std::vector<AblationCell> chosen;
    std::stringstream ss(grid);
    for (std::string name; std::getline(ss, name, ',');) {
      bool found = false;
      for (const auto& c : cells) {
        if (c.name == name) {
          chosen.push_back(c);
          found = true;
        }
      }
      require(found, ErrorKind::kConfig, "ablate: unknown grid cell '" + name + "'");
    }
    cells = chosen;
  }
  const auto out = or_default(out_arg, base, "ablation.jsonl");
  std::map<std::string, std::map<std::string, Mat<T>>> cache;
  std::vector<PipelineResult> rows;
  std::ostringstream lines;
  std::printf("%-18s %7s %7s %7s %7s %7s %7s\n", "variant", "emo_WA", "emo_UA", "emo_F1",
              "int_WA", "int_UA", "int_F1");
  for (const auto& cell : cells) {
    RunConfig cfg = base;
    cfg.ablation = cell.flags;
    validate(cfg);
    rows.push_back(run_reasoning_pipeline<T>(cfg, corpus, cell.name, &cache));
    const auto& t = rows.back().test;
    std::printf("%-18s %7s %7s %7s %7s %7s %7s\n", cell.name.c_str(), fmt(t.emotion.wa).c_str(),
                fmt(t.emotion.ua).c_str(), fmt(t.emotion.macro_f1).c_str(),
                fmt(t.intensity.wa).c_str(), fmt(t.intensity.ua).c_str(),
                fmt(t.intensity.macro_f1).c_str());
    std::fflush(stdout);
    lines << to_json(rows.back()).dump() << '\n';
  }
  io::write_text(out, lines.str());
  std::printf("out: %s\n", out.string().c_str());
  const auto violations = ablation_violations(rows);
  for (const auto& v : violations) std::fprintf(stderr, "ordering violated: %s\n", v.c_str());
  return violations.empty() ? kExitOk : kExitAblation;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"jelly: emotion-aware dialogue reasoning and synthesis at desk scale"};
  app.require_subcommand(1);

  std::string config, out, data, pred, ref, which = "classification", grid = "default";
  std::string stage2, stage3, dialogue, split = "test";
  auto* gen = app.add_subcommand("gen-data", "generate the synthetic corpus");
  gen->add_option("--config", config, "run-config JSON (default: toy preset)");
  gen->add_option("--out", out, "output directory (default: $JELLY_LAB_HOME/data)");

  TrainArgs s1, pt, s2, s3;
  auto* c1 = app.add_subcommand("train-stage1", "emotion-text alignment");
  add_train_options(c1, s1, false);
  auto* cp = app.add_subcommand("pretrain-stage2", "text-only pre-training of the text adapters");
  add_train_options(cp, pt, true);
  auto* c2 = app.add_subcommand("train-stage2", "emotional context reasoning");
  add_train_options(c2, s2, true);
  c2->add_flag("--allow-cold-start", s2.allow_cold_start,
               "train without stage1/pretrain initialization");
  auto* c3 = app.add_subcommand("train-stage3", "acoustic model");
  add_train_options(c3, s3, false);

  auto* inf = app.add_subcommand("infer", "predict labels and synthesize mel frames");
  inf->add_option("--stage2", stage2, "stage-2 checkpoint");
  inf->add_option("--stage3", stage3, "stage-3 checkpoint");
  inf->add_option("--dialogue", dialogue, "dialogue manifest JSON");
  inf->add_option("--data", data, "corpus directory (when no --dialogue)");
  inf->add_option("--split", split, "corpus split (when no --dialogue)");
  inf->add_option("--out", out, "output directory");

  auto* ev = app.add_subcommand("eval", "score predictions against references");
  ev->add_option("--pred", pred, "predictions (JSON lines)")->required();
  ev->add_option("--ref", ref, "references (JSON lines)")->required();
  ev->add_option("--metrics", which, "comma list: classification, wer");
  ev->add_option("--out", out, "report file (JSON lines)");

  auto* ab = app.add_subcommand("ablate", "run the ablation grid");
  ab->add_option("--config", config, "run-config JSON (default: toy preset)");
  ab->add_option("--data", data, "corpus directory (default: generate from config)");
  ab->add_option("--grid", grid, "\"default\" or a comma list of cell names");
  ab->add_option("--out", out, "result file (JSON lines)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*gen) return cmd_gen_data(config, out);
    if (*c1) return cmd_train_stage1(s1);
    if (*cp) return cmd_pretrain_stage2(pt);
    if (*c2) return cmd_train_stage2(s2);
    if (*c3) return cmd_train_stage3(s3);
    if (*inf) return cmd_infer(stage2, stage3, dialogue, data, split, out);
    if (*ev) return cmd_eval(pred, ref, which, out);
    if (*ab) return cmd_ablate(config, data, grid, out);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code(e.kind());
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitIo;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return kExitInternal;
  }
  return kExitInternal;
}
