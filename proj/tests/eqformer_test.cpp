// Copyright 2026 The jelly-lab Authors
// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "jelly/config.hpp"
#include "jelly/eqformer.hpp"
#include "testing.hpp"

namespace jelly {
namespace {

MatD features(int frames, int dim, std::uint64_t seed) {
  Rng rng(seed);
  return random_normal<double>(frames, dim, 1.0, rng);
}

EncoderConfig toy_encoder() { return {.feature_dim = 24, .dim = 32, .layers = 6, .heads = 4}; }

EqFormerConfig toy_eq() {
  EqFormerConfig c;
  c.projection_out_dim = 64;
  return c;
}

template <typename T>
struct Model {
  ParamStore<T> store;
  LayeredEncoder<T> enc;
  EqFormer<T> eq;
  Model(const EncoderConfig& e, const EqFormerConfig& q)
      : enc(store, e, 3), eq(store, q, e, 3) {}

  Mat<T> embed(const Mat<T>& x, const Mask& mask) {
    ag::Tape<T> t(false);
    return eq.forward(t, enc.encode_layers(x, mask)).embedding.value();
  }
};

TEST(Encoder, LayerShapesWithStrideTwo) {
  Model<double> m(toy_encoder(), toy_eq());
  const auto enc = m.enc.encode_layers(features(40, 24, 1));
  ASSERT_EQ(enc.layers.size(), 6u);
  for (const auto& l : enc.layers) {
    EXPECT_EQ(l.rows(), 20);
    EXPECT_EQ(l.cols(), 32);
  }
  EXPECT_EQ(enc.stride, 2);
  EXPECT_EQ(enc.frame_mask.size(), 20u);
}

TEST(Encoder, MaskedPaddingLeavesOutputsUnchanged) {
  Model<double> m(toy_encoder(), toy_eq());
  for (int frames : {40, 41}) {
    const MatD x = features(frames, 24, 2);
    MatD padded(frames + 10, 24);
    padded.topRows(frames) = x;
    padded.bottomRows(10) = features(10, 24, 3) * 50.0;
    Mask mask(static_cast<std::size_t>(frames + 10), 1);
    std::fill(mask.begin() + frames, mask.end(), 0);
    const auto a = m.enc.encode_layers(x);
    const auto b = m.enc.encode_layers(padded, mask);
    for (std::size_t l = 0; l < a.layers.size(); ++l) {
      const auto rows = a.layers[l].rows();
      EXPECT_LE((a.layers[l] - b.layers[l].topRows(rows)).cwiseAbs().maxCoeff(), 1e-6);
    }
    EXPECT_LE((m.embed(x, Mask(frames, 1)) - m.embed(padded, mask)).cwiseAbs().maxCoeff(),
              1e-6);
  }
}

TEST(Encoder, RejectsDimensionMismatch) {
  Model<double> m(toy_encoder(), toy_eq());
  EXPECT_THROW(m.enc.encode_layers(features(10, 23, 1)), Error);
  EXPECT_THROW(m.enc.encode_layers(features(10, 24, 1), Mask(9, 1)), Error);
}

TEST(Encoder, PaperPresetHas32Layers) {
  const RunConfig cfg = preset("paper");
  EXPECT_EQ(cfg.encoder.layers, 32);
  EncoderConfig narrow = cfg.effective_encoder();
  narrow.dim = 16;
  narrow.heads = 2;
  ParamStore<float> store;
  LayeredEncoder<float> enc(store, narrow, 1);
  EXPECT_EQ(enc.encode_layers(features(8, narrow.feature_dim, 1).cast<float>()).layers.size(),
            32u);
}

TEST(Tltr, LayerWeightsFormProbabilityVector) {
  Model<double> m(toy_encoder(), toy_eq());
  ag::Tape<double> t(false);
  const auto out = m.eq.forward(t, m.enc.encode_layers(features(30, 24, 4)));
  const MatD w = out.layer_weights.value();
  EXPECT_EQ(w.size(), 6);
  EXPECT_NEAR(w.sum(), 1.0, 1e-6);
  EXPECT_GE(w.minCoeff(), 0.0);
}

TEST(Tltr, SingleLayerDegeneratesToWeightOne) {
  Model<double> m(toy_encoder(), toy_eq());
  const auto enc = m.enc.encode_layers(features(20, 24, 5));
  ag::Tape<double> t(false);
  auto one = t.constant(enc.layers[2]);
  auto [f1, w1] = m.eq.tltr(t, {one}, enc.frame_mask);
  EXPECT_EQ(w1.value()(0, 0), 1.0);
  // Same layer twice: any weighting returns the single-layer output.
  auto [f2, w2] = m.eq.tltr(t, {one, one}, enc.frame_mask);
  EXPECT_LE((f1.value() - f2.value()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Tltr, DisabledFeedsLastLayer) {
  auto q = toy_eq();
  q.use_tltr = false;
  Model<double> m(toy_encoder(), q);
  const auto enc = m.enc.encode_layers(features(20, 24, 6));
  ag::Tape<double> t(false);
  const auto out = m.eq.forward(t, enc);
  EXPECT_EQ(out.features.value(), enc.layers.back());
  EXPECT_EQ(m.store.count_in(ParamGroup::kTltr), 0u);
}

TEST(Qformer, FixedQueryCountForAnyLength) {
  Model<double> m(toy_encoder(), toy_eq());
  for (int frames : {1, 2, 10, 57, 200}) {
    const MatD e = m.embed(features(frames, 24, 7), Mask(frames, 1));
    EXPECT_EQ(e.rows(), 8);
    EXPECT_EQ(e.cols(), 64);
    EXPECT_TRUE(e.allFinite());
  }
}

TEST(Qformer, MaskedFramesAreInvisible) {
  Model<double> m(toy_encoder(), toy_eq());
  MatD x = features(24, 24, 8);
  Mask mask(24, 1);
  for (int i = 16; i < 24; ++i) mask[i] = 0;
  const MatD a = m.embed(x, mask);
  x.bottomRows(8).setConstant(123.0);
  EXPECT_EQ(a, m.embed(x, mask));

  const auto enc = m.enc.encode_layers(features(10, 24, 9));
  ag::Tape<double> t(false);
  auto f = t.constant(enc.layers.back());
  MatD perturbed = enc.layers.back();
  Mask half(5, 1);
  half[3] = half[4] = 0;
  perturbed.bottomRows(2).setConstant(-7.0);
  const MatD q1 = m.eq.qformer(t, f, half).value();
  const MatD q2 = m.eq.qformer(t, t.constant(perturbed), half).value();
  EXPECT_EQ(q1, q2);
}

TEST(Qformer, AllMaskedInputRejected) {
  Model<double> m(toy_encoder(), toy_eq());
  ag::Tape<double> t(false);
  try {
    m.eq.qformer(t, t.constant(MatD::Ones(4, 32)), Mask(4, 0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kShape);
  }
}

TEST(Qformer, DisabledMeanPoolsAndDropsQueryParams) {
  auto q = toy_eq();
  q.use_qformer = false;
  q.use_tltr = false;
  Model<double> m(toy_encoder(), q);
  EXPECT_EQ(m.store.count_in(ParamGroup::kQformer), 0u);
  EXPECT_EQ(m.eq.output_rows(), 1);
  const auto enc = m.enc.encode_layers(features(12, 24, 10));
  ag::Tape<double> t(false);
  const MatD got = m.eq.forward(t, enc).embedding.value();
  const auto& proj = m.store.at("eqformer.projection.w").value;
  const auto& bias = m.store.at("eqformer.projection.b").value;
  const MatD want = enc.layers.back().colwise().mean() * proj.transpose() + bias;
  EXPECT_LE((got - want).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Projection, IdentityInitIsIdentity) {
  Model<double> m(toy_encoder(), toy_eq());
  m.store.at("eqformer.projection.w").value = MatD::Identity(64, 64);
  m.store.at("eqformer.projection.b").value.setZero();
  ag::Tape<double> t(false);
  const MatD x = features(8, 64, 11);
  EXPECT_EQ(m.eq.project(t, t.constant(x)).value(), x);
}

TEST(Projection, PaperPresetYields25Rows) {
  const RunConfig cfg = preset("paper");
  const auto q = cfg.effective_eqformer();
  EXPECT_EQ(q.num_query_tokens, 25);
  EXPECT_EQ(q.query_dim, 768);
  EncoderConfig e = cfg.effective_encoder();
  ParamStore<float> store;
  EqFormer<float> eq(store, q, e, 1);
  std::vector<MatF> layers;
  Rng rng(1);
  ag::Tape<float> t(false);
  std::vector<ag::Var<float>> vars;
  for (int l = 0; l < 3; ++l) vars.push_back(t.constant(random_normal<float>(5, e.dim, 1.0, rng)));
  const auto out = eq.forward(t, vars, Mask(5, 1));
  EXPECT_EQ(out.embedding.rows(), 25);
  EXPECT_EQ(out.embedding.cols(), cfg.lm.dim);
}

// Small widths keep the finite-difference sweep fast.
EncoderConfig tiny_encoder() { return {.feature_dim = 10, .dim = 8, .layers = 2, .heads = 2}; }

EqFormerConfig tiny_eq() {
  EqFormerConfig c;
  c.num_query_tokens = 3;
  c.query_dim = 8;
  c.num_qformer_blocks = 1;
  c.qformer_heads = 2;
  c.tltr_heads = 2;
  c.projection_out_dim = 6;
  return c;
}

TEST(Gradients, EncoderAndEqFormerMatchFiniteDifferences) {
  Model<double> m(tiny_encoder(), tiny_eq());
  const MatD x = features(7, 10, 12);
  Mask mask(7, 1);
  mask[6] = 0;
  auto loss = [&](ag::Tape<double>& t) {
    auto layers = m.enc.encode(t, x, mask);
    Mask merged = downsample_mask(mask);
    return testing::probe(m.eq.forward(t, layers, merged).embedding);
  };
  for (auto& p : m.store) {
    EXPECT_LT(testing::gradcheck(m.store, *p, loss, 6), 1e-4) << p->name;
  }
}

TEST(Gradients, AblatedWiringMatchesFiniteDifferences) {
  auto q = tiny_eq();
  q.use_qformer = false;
  Model<double> m(tiny_encoder(), q);
  const MatD x = features(6, 10, 13);
  auto loss = [&](ag::Tape<double>& t) {
    auto layers = m.enc.encode(t, x, Mask(6, 1));
    return testing::probe(m.eq.forward(t, layers, Mask(3, 1)).embedding);
  };
  std::string worst;
  EXPECT_LT(testing::gradcheck_all(m.store, loss, &worst), 1e-4) << worst;
}

}  // namespace
}  // namespace jelly
