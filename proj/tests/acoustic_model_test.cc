// Copyright (c) 2026 The duopath Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "duopath/acoustic_model.h"
#include "test_util.h"

namespace duopath {
namespace {

using testing::RandomMatrix;
using testing::TempDir;

const std::vector<std::string> kPhonemes = {"a", "b", "c", "d", "e", "f"};

AcousticConfig SmallConfig(Ablation ablation = Ablation::kNone) {
  AcousticConfig c;
  c.d_model = 8;
  c.d_style = 6;
  c.encoder_layers = 1;
  c.decoder_layers = 2;
  c.heads = 2;
  c.filter = 12;
  c.kernel = 3;
  c.predictor_filter = 8;
  c.style_heads = 2;
  c.style_conv_layers = 2;
  c.style_kernel = 3;
  c.ablation = ablation;
  return c;
}

TtsExample RandomExample(const AcousticConfig& cfg, int n, Rng& rng) {
  TtsExample ex;
  ex.id = "x";
  int t = 0;
  for (int i = 0; i < n; ++i) {
    ex.phonemes.push_back(static_cast<int>(rng.Index(kPhonemes.size())));
    ex.durations.push_back(1 + static_cast<int>(rng.Index(3)));
    t += ex.durations.back();
  }
  ex.pitch = RandomMatrix(n, 1, rng).col(0);
  ex.energy = RandomMatrix(n, 1, rng).col(0);
  ex.mel = RandomMatrix(t, cfg.n_mels, rng);
  ex.h_s = RandomMatrix(1, cfg.d_style, rng).row(0);
  ex.h_cs = RandomMatrix(2 * cfg.context_k + 1, cfg.d_style, rng);
  ex.h_se = RandomMatrix(t, cfg.d_style, rng);
  return ex;
}

ErrorCode CodeOf(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorCode::kIoError;
}

TEST(LengthRegulateTest, Examples) {
  Matrix h(3, 2);
  h << 1, 2, 3, 4, 5, 6;
  Matrix want(6, 2);
  want << 1, 2, 1, 2, 3, 4, 5, 6, 5, 6, 5, 6;
  EXPECT_EQ(LengthRegulate(ag::Constant(h), {2, 1, 3}).value(), want);
  EXPECT_EQ(LengthRegulate(ag::Constant(h), {1, 1, 1}).value(), h);
  Matrix b(4, 2);
  b << 3, 4, 3, 4, 3, 4, 3, 4;
  EXPECT_EQ(LengthRegulate(ag::Constant(h), {0, 4, 0}).value(), b);
  EXPECT_EQ(CodeOf([&] { LengthRegulate(ag::Constant(h), {0, 0, 0}); }),
            ErrorCode::kEmptyExpansion);
}

TEST(LengthRegulateTest, RandomProperties) {
  Rng rng(21);
  for (int trial = 0; trial < 500; ++trial) {
    const int n = 1 + static_cast<int>(rng.Index(8));
    const int d = 1 + static_cast<int>(rng.Index(5));
    std::vector<int> dur(n);
    int total = 0;
    for (int& v : dur) {
      v = static_cast<int>(rng.Index(5));
      total += v;
    }
    if (total == 0) {
      dur[rng.Index(n)] = 1;
      total = 1;
    }
    const Matrix a = RandomMatrix(n, d, rng);
    const Matrix b = RandomMatrix(n, d, rng);
    const Matrix ea = LengthRegulate(ag::Constant(a), dur).value();
    ASSERT_EQ(ea.rows(), total);
    int r = 0;
    for (int i = 0; i < n; ++i) {
      for (int k = 0; k < dur[i]; ++k) ASSERT_EQ(ea.row(r++), a.row(i));
    }
    const Matrix eb = LengthRegulate(ag::Constant(b), dur).value();
    const Matrix esum = LengthRegulate(ag::Constant(Matrix(a + b)), dur).value();
    ASSERT_EQ(esum, Matrix(ea + eb));
  }
}

TEST(DurationTest, LogInversionRoundsHalfUp) {
  Vector v(5);
  v << std::log(4.0), std::log(3.5), std::log(3.4999), std::log(1.0), -3.0;
  EXPECT_EQ(DurationsFromLog(v), (std::vector<int>{3, 3, 2, 1, 1}));
  for (int d = 1; d < 40; ++d) {
    Vector x(1);
    x << std::log(d + 1.0);
    EXPECT_EQ(DurationsFromLog(x)[0], d);
  }
}

TEST(AcousticModelTest, PhonemeEncoder) {
  AcousticModel m(SmallConfig(), kPhonemes, 1);
  Tape t1(false), t2(false), t3(false);
  EXPECT_EQ(m.EncodePhonemes(t1, {2}).rows(), 1);
  const Matrix a = m.EncodePhonemes(t1, {0, 1, 2}).value();
  EXPECT_EQ(a, m.EncodePhonemes(t2, {0, 1, 2}).value());
  EXPECT_NE(a, m.EncodePhonemes(t3, {1, 0, 2}).value());
  EXPECT_TRUE(a.allFinite());
  EXPECT_EQ(CodeOf([&] { m.EncodePhonemes(t1, {6}); }), ErrorCode::kUnknownPhoneme);
  EXPECT_EQ(CodeOf([&] { m.PhonemeIds({"zz"}); }), ErrorCode::kUnknownPhoneme);
}

TEST(AcousticModelTest, VarianceAdaptor) {
  AcousticModel m(SmallConfig(), kPhonemes, 2);
  Rng rng(3);
  const RowVector hs = RandomMatrix(1, 6, rng).row(0);
  Tape tape(false);
  const ag::Var hp = m.EncodePhonemes(tape, {0, 3, 5});
  VarianceTargets tgt{{2, 1, 3}, Vector::Zero(3), Vector::Zero(3)};
  const VarianceResult r = m.VarianceAdapt(tape, hp, hs, &tgt);
  EXPECT_EQ(r.h_p_frame.rows(), 6);
  EXPECT_EQ(r.h_s_frame.rows(), 6);
  EXPECT_EQ(r.h_s_frame.cols(), 6);
  EXPECT_EQ(r.dur_pred.rows(), 3);

  const VarianceResult z = m.VarianceAdapt(tape, hp, RowVector::Zero(6), &tgt);
  EXPECT_NE(z.dur_pred.value(), r.dur_pred.value());
  EXPECT_NE(z.pitch_pred.value(), r.pitch_pred.value());
  EXPECT_NE(z.energy_pred.value(), r.energy_pred.value());
  EXPECT_EQ(z.h_p_frame.value(), r.h_p_frame.value());

  VarianceTargets bumped = tgt;
  bumped.pitch[1] = 0.7;
  const VarianceResult p = m.VarianceAdapt(tape, hp, hs, &bumped);
  EXPECT_NE(p.h_s_frame.value(), r.h_s_frame.value());
  EXPECT_EQ(p.h_p_frame.value(), r.h_p_frame.value());

  Tape train(true);
  const ag::Var hp2 = m.EncodePhonemes(train, {0, 3, 5});
  EXPECT_EQ(CodeOf([&] { m.VarianceAdapt(train, hp2, hs, nullptr); }),
            ErrorCode::kMissingTargets);
}

TEST(AcousticModelTest, PhonemePathIgnoresStyle) {
  AcousticModel m(SmallConfig(), kPhonemes, 4);
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    TtsExample a = RandomExample(m.config(), 4, rng);
    TtsExample b = a;
    b.h_s = RandomMatrix(1, 6, rng).row(0);
    b.h_cs = RandomMatrix(5, 6, rng);
    b.pitch = RandomMatrix(4, 1, rng).col(0);
    b.energy = RandomMatrix(4, 1, rng).col(0);
    Tape ta(false), tb(false);
    const TtsForward fa = m.Forward(ta, a);
    const TtsForward fb = m.Forward(tb, b);
    ASSERT_EQ(fa.variance.h_p_frame.value(), fb.variance.h_p_frame.value());
    ASSERT_NE(fa.h_sd.value(), fb.h_sd.value());
  }
}

TEST(AcousticModelTest, StyleDecoder) {
  AcousticConfig cfg = SmallConfig();
  AcousticModel m(cfg, kPhonemes, 6);
  Rng rng(7);
  Tape tape(false);
  const ag::Var hs_frame = ag::Constant(RandomMatrix(9, 6, rng));
  std::vector<Matrix> attn;
  const ag::Var one = m.StyleDecode(tape, hs_frame, Matrix::Zero(1, 6), &attn);
  EXPECT_EQ(one.rows(), 9);
  EXPECT_EQ(one.cols(), 6);
  for (const Matrix& w : attn) EXPECT_TRUE((w.array() == 1.0).all());

  attn.clear();
  m.StyleDecode(tape, hs_frame, RandomMatrix(5, 6, rng), &attn);
  ASSERT_EQ(attn.size(), 2u);
  for (const Matrix& w : attn) {
    ASSERT_EQ(w.cols(), 5);
    for (Eigen::Index r = 0; r < w.rows(); ++r) EXPECT_NEAR(w.row(r).sum(), 1.0, 1e-12);
  }
  EXPECT_EQ(m.StyleDecode(tape, ag::Constant(RandomMatrix(1, 6, rng)), RandomMatrix(5, 6, rng))
                .rows(),
            1);
}

TEST(AcousticModelTest, InjectionStartsAsNoOp) {
  AcousticModel m(SmallConfig(), kPhonemes, 8);
  Rng rng(9);
  Tape tape(false);
  const ag::Var hp = ag::Constant(RandomMatrix(62, 8, rng));
  const DecoderResult a = m.MelDecode(tape, hp, ag::Constant(Matrix::Zero(62, 6)));
  const DecoderResult b = m.MelDecode(tape, hp, ag::Constant(RandomMatrix(62, 6, rng)));
  EXPECT_EQ(a.mel.rows(), 62);
  EXPECT_EQ(a.mel.cols(), 80);
  EXPECT_EQ(a.mel.value(), b.mel.value());
  EXPECT_EQ(CodeOf([&] { m.MelDecode(tape, hp, ag::Constant(Matrix::Zero(61, 6))); }),
            ErrorCode::kShapeMismatch);
}

TEST(AcousticModelTest, InjectionBecomesLive) {
  AcousticModel m(SmallConfig(), kPhonemes, 10);
  Rng rng(11);
  const TtsExample ex = RandomExample(m.config(), 5, rng);
  AdamConfig acfg;
  acfg.warmup_steps = 1;
  Adam adam(m.params(), acfg);
  for (int step = 0; step < 2; ++step) {
    Tape tape(true);
    ag::Var loss = m.Loss(m.Forward(tape, ex), ex, 1.0).total;
    ag::Backward(loss);
    GradientBuffer g;
    g.Add(tape.Gradients());
    adam.Step(g);
  }
  Tape tape(false);
  const int t = static_cast<int>(ex.mel.rows());
  const ag::Var hp = ag::Constant(RandomMatrix(t, 8, rng));
  ag::Var hsd = ag::Leaf(RandomMatrix(t, 6, rng));
  ag::Var loss = ag::L1Loss(m.MelDecode(tape, hp, hsd).mel, ag::Constant(ex.mel));
  ag::Backward(loss);
  EXPECT_GT(hsd.grad().cwiseAbs().maxCoeff(), 0.0);
}

TEST(AcousticModelTest, LossAlgebra) {
  AcousticModel m(SmallConfig(), kPhonemes, 12);
  Rng rng(13);
  TtsExample ex = RandomExample(m.config(), 4, rng);
  Tape tape(true);
  const TtsForward f = m.Forward(tape, ex);
  for (double alpha : {0.0, 0.5, 1.0, 3.0}) {
    const TtsLosses l = m.Loss(f, ex, alpha);
    EXPECT_EQ(l.total.scalar(), l.tts.scalar() + alpha * l.style.scalar());
    for (const ag::Var* v : {&l.mel, &l.duration, &l.pitch, &l.energy, &l.style}) {
      EXPECT_TRUE(std::isfinite(v->scalar()));
      EXPECT_GE(v->scalar(), 0.0);
    }
  }
  EXPECT_EQ(m.Loss(f, ex, 0.0).total.scalar(), m.Loss(f, ex, 0.0).tts.scalar());

  TtsExample same = ex;
  same.h_se = f.h_sd.value();
  EXPECT_EQ(m.Loss(f, same, 1.0).style.scalar(), 0.0);

  const Matrix delta = RandomMatrix(ex.h_se.rows(), 6, rng);
  same.h_se = f.h_sd.value() + delta;
  const double s1 = m.Loss(f, same, 1.0).style.scalar();
  same.h_se = f.h_sd.value() + 2.0 * delta;
  EXPECT_NEAR(m.Loss(f, same, 1.0).style.scalar(), 4.0 * s1, 1e-12 * s1);
}

TEST(AcousticModelTest, GradientCheck) {
  AcousticModel m(SmallConfig(), kPhonemes, 14);
  Rng rng(15);
  TtsExample ex = RandomExample(m.config(), 3, rng);
  ex.durations = {2, 3, 2};
  ex.mel = RandomMatrix(7, 80, rng);
  ex.h_se = RandomMatrix(7, 6, rng);
  // Make the injection and the style path non-trivial before checking.
  for (const auto& p : m.params().all()) {
    if (p->name.find("inject") != std::string::npos) {
      p->value = RandomMatrix(p->value.rows(), p->value.cols(), rng, 0.3);
    }
  }
  auto loss_of = [&] {
    Tape tape(true);
    return m.Loss(m.Forward(tape, ex), ex, 1.0).total.scalar();
  };
  Tape tape(true);
  ag::Var loss = m.Loss(m.Forward(tape, ex), ex, 1.0).total;
  ag::Backward(loss);
  std::map<Parameter*, Matrix> grads;
  for (auto& [p, g] : tape.Gradients()) grads[p] = g;
  std::vector<Parameter*> params;
  for (const auto& p : m.params().all()) {
    if (grads.count(p.get())) params.push_back(p.get());
  }
  Rng pick(16);
  for (int k = 0; k < 10; ++k) {
    Parameter* p = params[pick.Index(params.size())];
    const auto i = static_cast<Eigen::Index>(pick.Index(p->value.size()));
    const double orig = p->value.data()[i];
    const double eps = 1e-5;
    p->value.data()[i] = orig + eps;
    const double plus = loss_of();
    p->value.data()[i] = orig - eps;
    const double minus = loss_of();
    p->value.data()[i] = orig;
    const double numeric = (plus - minus) / (2 * eps);
    const double analytic = grads[p].data()[i];
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    EXPECT_LT(std::abs(analytic - numeric) / denom, 1e-3) << p->name << "[" << i << "]";
  }
}

TEST(AcousticModelTest, InferenceLengthAndDeterminism) {
  AcousticModel m(SmallConfig(), kPhonemes, 17);
  Rng rng(18);
  const RowVector hs = RandomMatrix(1, 6, rng).row(0);
  const Matrix hcs = RandomMatrix(5, 6, rng);
  const std::vector<int> ids = {0, 1, 2, 3, 4, 5, 0};
  const Synthesis a = m.Infer(ids, hs, hcs);
  const Synthesis b = m.Infer(ids, hs, hcs);
  EXPECT_EQ(a.mel, b.mel);
  Tape tape(false);
  const VarianceResult v = m.VarianceAdapt(tape, m.EncodePhonemes(tape, ids), hs, nullptr);
  const std::vector<int> expect = DurationsFromLog(v.dur_pred.value().col(0));
  int frames = 0;
  for (int d : expect) {
    EXPECT_GE(d, 1);
    frames += d;
  }
  EXPECT_EQ(a.durations, expect);
  EXPECT_EQ(a.mel.rows(), frames);

  const Synthesis forced = m.Infer(ids, hs, hcs, {1, 2, 3, 1, 1, 1, 2});
  EXPECT_EQ(forced.mel.rows(), 11);
}

TEST(AcousticModelTest, NullContextSynthesizes) {
  TextStyleConfig tc;
  tc.d_model = 8;
  tc.layers = 1;
  tc.heads = 2;
  tc.filter = 8;
  tc.d_style = 6;
  tc.clusters = 2;
  TextStyleModel text(tc, Tokenizer::Build({"hello there"}, 1), 1);
  const Matrix hcs = text.EncodeContext({"", "", "", "", ""});
  AcousticModel m(SmallConfig(), kPhonemes, 19);
  const Synthesis s = m.Infer({0, 1}, text.EncodeStyle(""), hcs);
  EXPECT_TRUE(s.mel.allFinite());
  EXPECT_GT(s.mel.rows(), 0);
}

TEST(AcousticModelTest, AblationInventories) {
  const auto base = AcousticModel(SmallConfig(), kPhonemes, 1).GroupInventory();
  const auto no_dec =
      AcousticModel(SmallConfig(Ablation::kNoStyleDecoder), kPhonemes, 1).GroupInventory();
  const auto no_enc =
      AcousticModel(SmallConfig(Ablation::kNoStyleEncoder), kPhonemes, 1).GroupInventory();
  const auto no_ext =
      AcousticModel(SmallConfig(Ablation::kNoStyleExtractor), kPhonemes, 1).GroupInventory();
  EXPECT_TRUE(base.count("style_decoder"));
  EXPECT_FALSE(no_dec.count("style_decoder"));
  EXPECT_EQ(no_dec.at("encoder"), base.at("encoder"));
  EXPECT_EQ(no_dec.at("adaptor"), base.at("adaptor"));
  EXPECT_EQ(no_enc, base);
  EXPECT_EQ(no_ext, base);
  // With equal widths the style vector is added as is, so the only change
  // is the missing style decoder group.
  AcousticConfig wide = SmallConfig();
  wide.d_style = wide.d_model;
  auto same = AcousticModel(wide, kPhonemes, 1).GroupInventory();
  wide.ablation = Ablation::kNoStyleDecoder;
  same.erase("style_decoder");
  EXPECT_EQ(AcousticModel(wide, kPhonemes, 1).GroupInventory(), same);
  EXPECT_GT(no_dec.at("decoder"), base.at("decoder"));
  EXPECT_EQ(EffectiveAlpha(1.0, Ablation::kNoStyleExtractor), 0.0);
  EXPECT_EQ(EffectiveAlpha(1.0, Ablation::kNone), 1.0);
  EXPECT_EQ(ParseAblation("no_style_decoder"), Ablation::kNoStyleDecoder);
  EXPECT_EQ(CodeOf([] { ParseAblation("bogus"); }), ErrorCode::kBadConfig);
}

TEST(AcousticModelTest, AblationBehaviour) {
  Rng rng(20);
  AcousticModel no_enc(SmallConfig(Ablation::kNoStyleEncoder), kPhonemes, 3);
  const std::vector<int> ids = {1, 2, 3};
  const Synthesis a = no_enc.Infer(ids, RandomMatrix(1, 6, rng).row(0), RandomMatrix(5, 6, rng));
  const Synthesis b = no_enc.Infer(ids, RandomMatrix(1, 6, rng).row(0), RandomMatrix(5, 6, rng));
  EXPECT_EQ(a.mel, b.mel);

  AcousticModel no_ext(SmallConfig(Ablation::kNoStyleExtractor), kPhonemes, 3);
  const TtsExample ex = RandomExample(no_ext.config(), 4, rng);
  Tape tape(true);
  const TtsLosses l = no_ext.Loss(no_ext.Forward(tape, ex), ex, 1.0);
  EXPECT_EQ(l.total.scalar(), l.tts.scalar());

  AcousticModel no_dec(SmallConfig(Ablation::kNoStyleDecoder), kPhonemes, 3);
  Tape t2(true);
  const TtsForward f = no_dec.Forward(t2, ex);
  EXPECT_FALSE(f.h_sd.defined());
  const TtsLosses ld = no_dec.Loss(f, ex, 1.0);
  EXPECT_GT(ld.style.scalar(), 0.0);
  EXPECT_EQ(no_dec.Infer(ids, ex.h_s, ex.h_cs).mel.cols(), 80);
}

TEST(AcousticModelTest, SaveLoadRoundTrip) {
  TempDir dir("acoustic");
  AcousticModel m(SmallConfig(Ablation::kNoStyleDecoder), kPhonemes, 21);
  m.Save(dir / "a.ckpt");
  const AcousticModel r = AcousticModel::Load(dir / "a.ckpt");
  EXPECT_EQ(r.params().Checksum(), m.params().Checksum());
  EXPECT_EQ(r.config().ablation, Ablation::kNoStyleDecoder);
  Rng rng(22);
  const RowVector hs = RandomMatrix(1, 6, rng).row(0);
  const Matrix hcs = RandomMatrix(5, 6, rng);
  EXPECT_EQ(r.Infer({0, 4}, hs, hcs).mel, m.Infer({0, 4}, hs, hcs).mel);
  EXPECT_EQ(CodeOf([&] { AcousticModel::Load(dir / "missing.ckpt"); }),
            ErrorCode::kCheckpointMissing);
}

}  // namespace
}  // namespace duopath
