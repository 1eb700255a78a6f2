// Copyright 2026 The jelly-lab Authors
// SPDX-License-Identifier: Apache-2.0
#include <fstream>

#include <gtest/gtest.h>

#include "jelly/checkpoint.hpp"
#include "testing.hpp"

namespace jelly {
namespace {

void fill(ParamStore<float>& s, std::uint64_t seed, int extra_cols = 0) {
  Rng rng(seed);
  s.add("enc.w", ParamGroup::kEncoder, random_normal<float>(4, 3, 1.0, rng));
  s.add("proj.w", ParamGroup::kProjection, random_normal<float>(2, 5 + extra_cols, 1.0, rng));
  s.add("lm.a", ParamGroup::kPloraE, random_normal<float>(3, 3, 1.0, rng));
}

ErrorKind kind_of(const std::function<void()>& f, std::string* msg = nullptr) {
  try {
    f();
  } catch (const Error& e) {
    if (msg) *msg = e.what();
    return e.kind();
  }
  return ErrorKind::kDivergence;
}

SaveRequest<float> request(const AdamW<float>* opt = nullptr) {
  SaveRequest<float> r;
  r.stage = "stage1";
  r.step = 12;
  r.config = {{"seed", 7}};
  r.trainable = {ParamGroup::kProjection};
  r.optimizer = opt;
  return r;
}

TEST(Checkpoint, RoundTripPreservesDigests) {
  const auto dir = testing::scratch_dir("ckpt_round");
  Vocabulary v;
  ParamStore<float> a, b;
  fill(a, 1);
  fill(b, 2);
  ASSERT_NE(a.digests(), b.digests());
  const auto saved = save_checkpoint(dir, a, request(), v);
  const auto info = load_checkpoint(dir, b, v);
  EXPECT_EQ(a.digests(), b.digests());
  EXPECT_EQ(info.stage, "stage1");
  EXPECT_EQ(info.step, 12);
  EXPECT_EQ(info.trainable, GroupSet{ParamGroup::kProjection});
  EXPECT_EQ(info.config, saved.config);
  EXPECT_FALSE(info.has_optimizer);
}

TEST(Checkpoint, OnlySelectedGroupsLoad) {
  const auto dir = testing::scratch_dir("ckpt_only");
  Vocabulary v;
  ParamStore<float> a, b;
  fill(a, 1);
  fill(b, 2);
  save_checkpoint(dir, a, request(), v);
  const MatF enc_before = b.at("enc.w").value;
  LoadOptions o;
  o.only = GroupSet{ParamGroup::kProjection};
  load_checkpoint(dir, b, v, o);
  EXPECT_EQ(b.at("proj.w").value, a.at("proj.w").value);
  EXPECT_EQ(b.at("enc.w").value, enc_before);
}

TEST(Checkpoint, OptimizerStateRestores) {
  const auto dir = testing::scratch_dir("ckpt_opt");
  Vocabulary v;
  ParamStore<float> a;
  fill(a, 1);
  a.set_trainable({ParamGroup::kProjection, ParamGroup::kPloraE});
  OptimConfig oc;
  oc.steps = 10;
  oc.warmup_steps = 2;
  AdamW<float> opt(oc);
  for (int s = 0; s < 3; ++s) {
    for (auto& p : a) p->grad.setConstant(0.1f * (s + 1));
    opt.update(a);
  }
  save_checkpoint(dir, a, request(&opt), v);
  ParamStore<float> b;
  fill(b, 9);
  AdamW<float> restored(oc);
  const auto info = load_checkpoint(dir, b, v, {}, &restored);
  EXPECT_TRUE(info.has_optimizer);
  EXPECT_EQ(restored.step(), opt.step());
  EXPECT_EQ(restored.first_moments(), opt.first_moments());
  EXPECT_EQ(restored.second_moments(), opt.second_moments());

  const auto bare = testing::scratch_dir("ckpt_bare");
  save_checkpoint(bare, a, request(), v);
  EXPECT_EQ(kind_of([&] { load_checkpoint(bare, b, v, {}, &restored); }),
            ErrorKind::kIncompatible);
}

TEST(Checkpoint, MissingAndMalformedManifests) {
  const auto dir = testing::scratch_dir("ckpt_bad");
  Vocabulary v;
  ParamStore<float> s;
  fill(s, 1);
  EXPECT_EQ(kind_of([&] { load_checkpoint(dir / "nowhere", s, v); }), ErrorKind::kIo);
  io::write_text(dir / "manifest.json", "{ not json");
  EXPECT_EQ(kind_of([&] { read_manifest(dir); }), ErrorKind::kFormat);
  io::write_text(dir / "manifest.json", R"({"format": "other", "version": 1})");
  EXPECT_EQ(kind_of([&] { read_manifest(dir); }), ErrorKind::kFormat);
  io::write_text(dir / "manifest.json", R"({"format": "jelly-checkpoint", "version": 99})");
  std::string msg;
  EXPECT_EQ(kind_of([&] { read_manifest(dir); }, &msg), ErrorKind::kFormat);
  EXPECT_NE(msg.find("99"), std::string::npos);
  io::write_text(dir / "manifest.json", R"({"format": "jelly-checkpoint", "version": 1})");
  EXPECT_EQ(kind_of([&] { read_manifest(dir); }), ErrorKind::kFormat);
}

TEST(Checkpoint, IncompatibleStoreReportsFullDiff) {
  const auto dir = testing::scratch_dir("ckpt_diff");
  Vocabulary v;
  ParamStore<float> a;
  fill(a, 1);
  save_checkpoint(dir, a, request(), v);
  ParamStore<float> b;
  fill(b, 1, 2);
  Rng rng(3);
  b.add("extra.w", ParamGroup::kAcoustic, random_normal<float>(1, 1, 1.0, rng));
  ParamStore<float> c;
  Rng rng2(4);
  c.add("enc.w", ParamGroup::kEncoder, random_normal<float>(4, 3, 1.0, rng2));
  std::string msg;
  EXPECT_EQ(kind_of([&] { load_checkpoint(dir, b, v); }, &msg), ErrorKind::kIncompatible);
  EXPECT_NE(msg.find("proj.w: checkpoint 2x5 vs model 2x7"), std::string::npos) << msg;
  EXPECT_NE(msg.find("missing in checkpoint: extra.w"), std::string::npos) << msg;
  EXPECT_EQ(kind_of([&] { load_checkpoint(dir, c, v); }, &msg), ErrorKind::kIncompatible);
  EXPECT_NE(msg.find("not in model: proj.w"), std::string::npos) << msg;
  EXPECT_NE(msg.find("not in model: lm.a"), std::string::npos) << msg;
}

TEST(Checkpoint, CorruptBlobFailsDigest) {
  const auto dir = testing::scratch_dir("ckpt_corrupt");
  Vocabulary v;
  ParamStore<float> a, b;
  fill(a, 1);
  fill(b, 2);
  save_checkpoint(dir, a, request(), v);
  auto blob = io::read_bytes(dir / "tensors.bin");
  blob[blob.size() - 2] ^= 0x5a;
  io::write_bytes(dir / "tensors.bin", blob);
  std::string msg;
  EXPECT_EQ(kind_of([&] { load_checkpoint(dir, b, v); }, &msg), ErrorKind::kFormat);
  EXPECT_NE(msg.find("digest mismatch for lm.a"), std::string::npos) << msg;
  blob.resize(8);
  io::write_bytes(dir / "tensors.bin", blob);
  EXPECT_EQ(kind_of([&] { load_checkpoint(dir, b, v); }), ErrorKind::kFormat);
}

}  // namespace
}  // namespace jelly
