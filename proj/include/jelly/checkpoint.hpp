// Copyright 2026 The jelly-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Stage checkpoint: a directory holding manifest.json (tensor names, groups,
// shapes, offsets, digests, config snapshot, versions, freeze plan, stage,
// step) and tensors.bin (little-endian float32 in manifest order). Optimizer
// moments, when saved, live in optimizer.bin with their own manifest section.

#include <cstring>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "jelly/corpus.hpp"
#include "jelly/io.hpp"
#include "jelly/optim.hpp"
#include "jelly/param.hpp"

namespace jelly {

inline constexpr std::string_view kCheckpointFormat = "jelly-checkpoint";
inline constexpr int kCheckpointVersion = 1;

struct TensorRecord {
  std::string name;
  ParamGroup group = ParamGroup::kEncoder;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  std::size_t offset = 0;  // in floats
  std::string digest;
};

struct CheckpointInfo {
  std::string stage;
  long step = 0;
  nlohmann::json config;
  GroupSet trainable;
  std::string vocab_fingerprint;
  int corpus_schema_version = kCorpusSchemaVersion;
  std::vector<TensorRecord> tensors;
  bool has_optimizer = false;

  std::map<std::string, std::string> digests() const {
    std::map<std::string, std::string> out;
    for (const auto& t : tensors) out[t.name] = t.digest;
    return out;
  }

  const TensorRecord* find(const std::string& name) const {
    for (const auto& t : tensors) {
      if (t.name == name) return &t;
    }
    return nullptr;
  }
};

inline std::string vocab_fingerprint(const Vocabulary& vocab) {
  std::string all;
  for (int i = 0; i < vocab.size(); ++i) {
    all += vocab.word(i);
    all.push_back('\n');
  }
  return sha256_hex(all.data(), all.size());
}

namespace ckpt_detail {

inline nlohmann::json groups_json(const GroupSet& g) {
  nlohmann::json a = nlohmann::json::array();
  for (auto x : g) a.push_back(std::string(group_name(x)));
  return a;
}

template <typename T>
std::vector<char> pack(const std::vector<const Mat<T>*>& mats) {
  std::size_t n = 0;
  for (const auto* m : mats) n += static_cast<std::size_t>(m->size());
  std::vector<char> out(n * sizeof(float));
  std::size_t off = 0;
  for (const auto* m : mats) {
    const auto f = to_f32(*m);
    if (!f.empty()) std::memcpy(out.data() + off, f.data(), f.size() * sizeof(float));
    off += f.size() * sizeof(float);
  }
  return out;
}

template <typename T>
void unpack(const std::vector<char>& blob, std::size_t offset, Mat<T>& dst,
            const std::string& what) {
  const std::size_t n = static_cast<std::size_t>(dst.size());
  require((offset + n) * sizeof(float) <= blob.size(), ErrorKind::kFormat,
          what + ": tensor extends past end of blob");
  std::vector<float> f(n);
  if (n > 0) std::memcpy(f.data(), blob.data() + offset * sizeof(float), n * sizeof(float));
  for (std::size_t i = 0; i < n; ++i) dst.data()[i] = static_cast<T>(f[i]);
}

}  // namespace ckpt_detail

template <typename T>
struct SaveRequest {
  std::string stage;
  long step = 0;
  nlohmann::json config;
  GroupSet trainable;
  const AdamW<T>* optimizer = nullptr;
};

template <typename T>
CheckpointInfo save_checkpoint(const std::filesystem::path& dir, const ParamStore<T>& store,
                               const SaveRequest<T>& req, const Vocabulary& vocab) {
  std::filesystem::create_directories(dir);
  CheckpointInfo info;
  info.stage = req.stage;
  info.step = req.step;
  info.config = req.config;
  info.trainable = req.trainable;
  info.vocab_fingerprint = vocab_fingerprint(vocab);
  std::vector<const Mat<T>*> mats;
  std::size_t off = 0;
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& p : store) {
    TensorRecord r{p->name, p->group, p->value.rows(), p->value.cols(), off,
                   tensor_digest(p->value)};
    off += static_cast<std::size_t>(p->value.size());
    mats.push_back(&p->value);
    tensors.push_back({{"name", r.name},
                       {"group", std::string(group_name(r.group))},
                       {"shape", {r.rows, r.cols}},
                       {"offset", r.offset},
                       {"digest", r.digest}});
    info.tensors.push_back(std::move(r));
  }
  const auto blob = ckpt_detail::pack(mats);
  io::write_bytes(dir / "tensors.bin", blob);
  nlohmann::json m{{"format", kCheckpointFormat},
                   {"version", kCheckpointVersion},
                   {"stage", req.stage},
                   {"step", req.step},
                   {"corpus_schema_version", kCorpusSchemaVersion},
                   {"vocab_fingerprint", info.vocab_fingerprint},
                   {"trainable_groups", ckpt_detail::groups_json(req.trainable)},
                   {"config", req.config},
                   {"tensors", tensors},
                   {"blob_sha256", sha256_hex(blob.data(), blob.size())}};
  if (req.optimizer != nullptr) {
    std::vector<const Mat<T>*> moments;
    nlohmann::json entries = nlohmann::json::array();
    std::size_t mo = 0;
    for (const auto& [name, mat] : req.optimizer->first_moments()) {
      const auto& v = req.optimizer->second_moments().at(name);
      entries.push_back({{"name", name}, {"shape", {mat.rows(), mat.cols()}}, {"offset", mo}});
      moments.push_back(&mat);
      moments.push_back(&v);
      mo += 2 * static_cast<std::size_t>(mat.size());
    }
    const auto ob = ckpt_detail::pack(moments);
    io::write_bytes(dir / "optimizer.bin", ob);
    m["optimizer"] = {{"step", req.optimizer->step()},
                      {"moments", entries},
                      {"blob_sha256", sha256_hex(ob.data(), ob.size())}};
    info.has_optimizer = true;
  }
  io::write_text(dir / "manifest.json", m.dump(2) + "\n");
  return info;
}

inline CheckpointInfo read_manifest(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  require(std::filesystem::exists(path), ErrorKind::kIo,
          "checkpoint: missing " + path.string());
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(io::read_text(path));
    require(m.at("format").get<std::string>() == kCheckpointFormat, ErrorKind::kFormat,
            path.string() + ": not a checkpoint manifest");
    require(m.at("version").get<int>() == kCheckpointVersion, ErrorKind::kFormat,
            path.string() + ": unsupported version " + m.at("version").dump());
    CheckpointInfo info;
    info.stage = m.at("stage").get<std::string>();
    info.step = m.at("step").get<long>();
    info.config = m.at("config");
    info.vocab_fingerprint = m.at("vocab_fingerprint").get<std::string>();
    info.corpus_schema_version = m.at("corpus_schema_version").get<int>();
    for (const auto& g : m.at("trainable_groups")) {
      info.trainable.insert(parse_group(g.get<std::string>()));
    }
    for (const auto& t : m.at("tensors")) {
      info.tensors.push_back(TensorRecord{
          t.at("name").get<std::string>(), parse_group(t.at("group").get<std::string>()),
          t.at("shape").at(0).get<Eigen::Index>(), t.at("shape").at(1).get<Eigen::Index>(),
          t.at("offset").get<std::size_t>(), t.at("digest").get<std::string>()});
    }
    info.has_optimizer = m.contains("optimizer");
    return info;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kFormat, path.string() + ": malformed manifest: " + e.what());
  }
}

// Names and shapes that differ between a checkpoint and a store, one line
// per difference; empty when every tensor of `store` has a same-shape twin.
template <typename T>
std::vector<std::string> compatibility_diff(const CheckpointInfo& info,
                                            const ParamStore<T>& store) {
  std::vector<std::string> diff;
  for (const auto& p : store) {
    const auto* r = info.find(p->name);
    if (r == nullptr) {
      diff.push_back("missing in checkpoint: " + p->name);
    } else if (r->rows != p->value.rows() || r->cols != p->value.cols()) {
      diff.push_back(p->name + ": checkpoint " + std::to_string(r->rows) + "x" +
                     std::to_string(r->cols) + " vs model " + std::to_string(p->value.rows()) +
                     "x" + std::to_string(p->value.cols()));
    }
  }
  for (const auto& r : info.tensors) {
    if (store.find(r.name) == nullptr) diff.push_back("not in model: " + r.name);
  }
  return diff;
}

struct LoadOptions {
  std::optional<GroupSet> only;  // restrict to these groups
  bool verify_digests = true;
};

// Loads tensors into `store`; refuses incompatible checkpoints with the full
// diff in the message.
template <typename T>
CheckpointInfo load_checkpoint(const std::filesystem::path& dir, ParamStore<T>& store,
                               const Vocabulary& vocab, const LoadOptions& opt = {},
                               AdamW<T>* optimizer = nullptr) {
  CheckpointInfo info = read_manifest(dir);
  require(info.vocab_fingerprint == vocab_fingerprint(vocab), ErrorKind::kIncompatible,
          "checkpoint " + dir.string() + ": vocabulary differs from the model vocabulary");
  require(info.corpus_schema_version == kCorpusSchemaVersion, ErrorKind::kIncompatible,
          "checkpoint " + dir.string() + ": corpus schema version " +
              std::to_string(info.corpus_schema_version));
  const auto diff = compatibility_diff(info, store);
  if (!diff.empty()) {
    std::string msg = "checkpoint " + dir.string() + " is incompatible with the model:";
    for (const auto& d : diff) msg += "\n  " + d;
    fail(ErrorKind::kIncompatible, msg);
  }
  const auto blob = io::read_bytes(dir / "tensors.bin");
  for (auto& p : store) {
    if (opt.only && !opt.only->contains(p->group)) continue;
    const auto* r = info.find(p->name);
    ckpt_detail::unpack(blob, r->offset, p->value, dir.string() + "/" + p->name);
    if (opt.verify_digests) {
      require(tensor_digest(p->value) == r->digest, ErrorKind::kFormat,
              "checkpoint " + dir.string() + ": digest mismatch for " + p->name);
    }
  }
  if (optimizer != nullptr) {
    require(info.has_optimizer, ErrorKind::kIncompatible,
            "checkpoint " + dir.string() + ": no optimizer state to resume from");
    const auto m = nlohmann::json::parse(io::read_text(dir / "manifest.json")).at("optimizer");
    const auto ob = io::read_bytes(dir / "optimizer.bin");
    optimizer->first_moments().clear();
    optimizer->second_moments().clear();
    for (const auto& e : m.at("moments")) {
      const auto name = e.at("name").get<std::string>();
      Mat<T> mm(e.at("shape").at(0).get<Eigen::Index>(), e.at("shape").at(1).get<Eigen::Index>());
      Mat<T> vv(mm.rows(), mm.cols());
      const auto off = e.at("offset").get<std::size_t>();
      ckpt_detail::unpack(ob, off, mm, "optimizer " + name);
      ckpt_detail::unpack(ob, off + static_cast<std::size_t>(mm.size()), vv, "optimizer " + name);
      optimizer->first_moments()[name] = std::move(mm);
      optimizer->second_moments()[name] = std::move(vv);
    }
    optimizer->set_step(m.at("step").get<long>());
  }
  return info;
}

}  // namespace jelly
