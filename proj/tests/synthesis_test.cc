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

#include <filesystem>
#include <fstream>
#include <iterator>

#include "duopath/style_extractor.h"
#include "duopath/synthesis.h"
#include "fixture_util.h"

namespace duopath {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using testing::PreparedFixture;
using testing::TempDir;

ErrorCode CodeOf(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no duopath::Error raised";
  return ErrorCode::kNumericalError;
}

std::string ReadBytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

// Untrained models with the fixture shapes.
struct Models {
  TempDir dir{"synth"};
  std::string ckpt_dir;

  static const Models& Get() {
    static std::unique_ptr<Models> m = [] {
      auto p = std::make_unique<Models>();
      const auto& fx = PreparedFixture::Get();
      const Config cfg = testing::FixtureConfig();
      std::vector<std::string> texts;
      for (const auto& r : fx.manifest.records()) texts.push_back(r.text);
      TextStyleModel text(TextStyleConfig::FromConfig(cfg), Tokenizer::Build(texts, 1), 3);
      AcousticModel acoustic(AcousticConfig::FromConfig(cfg),
                             fx.manifest.phoneme_inventory(), 4);
      // The style injection starts at zero; give it weight so that context
      // reaches the mel.
      Rng rng(8);
      for (const auto& param : acoustic.params().all()) {
        if (param->name.find("inject") != std::string::npos) {
          param->value = testing::RandomMatrix(param->value.rows(), param->value.cols(), rng, 0.3);
        }
      }
      p->ckpt_dir = p->dir / "run";
      fs::create_directories(p->ckpt_dir);
      text.Save(p->ckpt_dir + "/text_style.ckpt");
      acoustic.Save(p->ckpt_dir + "/best.ckpt");
      return p;
    }();
    return *m;
  }
};

Config QuickConfig() {
  Config cfg = testing::FixtureConfig();
  cfg.Set("synthesis.griffin_lim_iterations", "8");
  return cfg;
}

const std::string kNull = kNullContext;

TEST(ContextWindowTest, EmptyContextIsAllNull) {
  const auto w = MakeWindow("hello there", SynthesisContext(), 2);
  EXPECT_EQ(w, (std::vector<std::string>{kNull, kNull, "hello there", kNull, kNull}));
}

TEST(ContextWindowTest, PastAndFutureFillNearestSlots) {
  SynthesisContext ctx;
  ctx.past = {"p1", "p2", "p3"};
  ctx.future = {"f1"};
  EXPECT_EQ(MakeWindow("s", ctx, 2), (std::vector<std::string>{"p2", "p3", "s", "f1", kNull}));
  EXPECT_EQ(MakeWindow("s", ctx, 1), (std::vector<std::string>{"p3", "s", "f1"}));
}

TEST(ContextWindowTest, ExplicitWindowMustMatchK) {
  SynthesisContext ctx;
  ctx.window = {"a", "b", "x", "d", "e"};
  ctx.explicit_window = true;
  EXPECT_EQ(MakeWindow("c", ctx, 2), (std::vector<std::string>{"a", "b", "c", "d", "e"}));
  EXPECT_EQ(CodeOf([&] { MakeWindow("c", ctx, 1); }), ErrorCode::kBadWindow);
}

TEST(ContextWindowTest, ParagraphWindows) {
  EXPECT_EQ(ParagraphWindow({"only"}, 0, 2),
            (std::vector<std::string>{kNull, kNull, "only", kNull, kNull}));
  const std::vector<std::string> five = {"s1", "s2", "s3", "s4", "s5"};
  EXPECT_EQ(ParagraphWindow(five, 2, 2), five);
  EXPECT_EQ(ParagraphWindow(five, 0, 2),
            (std::vector<std::string>{kNull, kNull, "s1", "s2", "s3"}));
  EXPECT_EQ(ParagraphWindow(five, 4, 2),
            (std::vector<std::string>{"s3", "s4", "s5", kNull, kNull}));
}

TEST(ContextWindowTest, ContextFileFormats) {
  TempDir dir("ctx");
  const std::string obj = dir / "obj.json";
  std::ofstream(obj) << R"({"past": ["a"], "future": ["b", "c"]})";
  const SynthesisContext c1 = ReadContextFile(obj);
  EXPECT_EQ(MakeWindow("s", c1, 2), (std::vector<std::string>{kNull, "a", "s", "b", "c"}));
  const std::string arr = dir / "arr.json";
  std::ofstream(arr) << R"(["a", "b", "", "d", "e"])";
  EXPECT_EQ(MakeWindow("s", ReadContextFile(arr), 2),
            (std::vector<std::string>{"a", "b", "s", "d", "e"}));
  const std::string empty = dir / "empty.json";
  std::ofstream(empty) << "[]";
  EXPECT_EQ(MakeWindow("s", ReadContextFile(empty), 1),
            (std::vector<std::string>{kNull, "s", kNull}));
  const std::string bad = dir / "bad.json";
  std::ofstream(bad) << "not json";
  EXPECT_EQ(CodeOf([&] { ReadContextFile(bad); }), ErrorCode::kBadWindow);
  EXPECT_EQ(CodeOf([&] { ReadContextFile(dir / "missing.json"); }), ErrorCode::kIoError);
}

TEST(MelCorrelationTest, Algebra) {
  Rng rng(5);
  const Matrix a = testing::RandomMatrix(30, 6, rng);
  EXPECT_NEAR(MelCorrelation(a, a), 1.0, 1e-12);
  Matrix affine = a;
  for (Eigen::Index c = 0; c < a.cols(); ++c) {
    affine.col(c) = a.col(c).array() * (c + 1.5) + 3.0 * c;
  }
  EXPECT_NEAR(MelCorrelation(a, affine), 1.0, 1e-12);
  EXPECT_NEAR(MelCorrelation(a, -a), -1.0, 1e-12);
  Matrix with_constant = a;
  with_constant.col(0).setConstant(2.0);
  EXPECT_NEAR(MelCorrelation(a, with_constant), 1.0, 1e-12);
  EXPECT_EQ(CodeOf([&] { MelCorrelation(a, a.topRows(10)); }), ErrorCode::kShapeMismatch);
}

TEST(MelInversionTest, PseudoInverseRecoversRowSpace) {
  FeatureConfig fc;
  const Matrix fb = MelFilterbank(fc.sample_rate, fc.n_fft, fc.n_mels, fc.f_min, fc.f_max);
  Rng rng(11);
  // Magnitudes in the row space of the filterbank are recovered exactly.
  const Matrix coeff = testing::RandomMatrix(4, fc.n_mels, rng).cwiseAbs();
  const Matrix linear = coeff * fb;
  const Matrix log_mel = (linear * fb.transpose()).array().log().matrix();
  const Matrix back = MelToLinear(log_mel, fc);
  ASSERT_EQ(back.rows(), 4);
  ASSERT_EQ(back.cols(), fc.n_fft / 2 + 1);
  EXPECT_LT((back - linear).cwiseAbs().maxCoeff(), 1e-6 * linear.cwiseAbs().maxCoeff());
  EXPECT_GE(MelToLinear(testing::RandomMatrix(5, fc.n_mels, rng), fc).minCoeff(), 0.0);
  EXPECT_EQ(CodeOf([&] { MelToLinear(Matrix::Zero(2, 7), fc); }), ErrorCode::kShapeMismatch);
}

TEST(MelInversionTest, NonNegativeRefinementDescends) {
  FeatureConfig fc;
  const Matrix fb = MelFilterbank(fc.sample_rate, fc.n_fft, fc.n_mels, fc.f_min, fc.f_max);
  Rng rng(12);
  // Sparse non-negative spectra, mostly outside the filterbank row space.
  Matrix linear = testing::RandomMatrix(3, fc.n_fft / 2 + 1, rng).cwiseMax(0.0);
  linear.array() += 1e-3;
  const Matrix mel = linear * fb.transpose();
  const Matrix log_mel = mel.array().log().matrix();
  auto residual = [&](int iterations) {
    const Matrix x = MelToLinear(log_mel, fc, iterations);
    EXPECT_GE(x.minCoeff(), 0.0);
    return (x * fb.transpose() - mel).norm();
  };
  const double r0 = residual(0);
  const double r10 = residual(10);
  const double r50 = residual(50);
  const double r200 = residual(200);
  EXPECT_LE(r10, r0);
  EXPECT_LE(r50, r10 * (1 + 1e-12));
  EXPECT_LE(r200, r50 * (1 + 1e-12));
  EXPECT_LT(r200, 0.5 * r0);
}

TEST(MelInversionTest, GriffinLimRoundTripKeepsMelShape) {
  const auto& fx = PreparedFixture::Get();
  const FeatureConfig fc = FeatureConfig::FromConfig(testing::FixtureConfig());
  const auto& rec = fx.manifest.records().front();
  const Matrix mel = ReadFeatureCache(fx.manifest.FeaturePath(rec.id)).mel;
  GriffinLimOptions gl;
  for (int nnls : {0, 100}) {
    const Waveform w = MelToWaveform(mel, fc, gl, nnls);
    EXPECT_EQ(w.sample_rate, fc.sample_rate);
    Stft stft(fc.n_fft, fc.win_length, fc.hop_length);
    EXPECT_EQ(stft.NumFrames(w.samples.size()), mel.rows());
    const Matrix again = ExtractFeatures(w, fc).mel;
    ASSERT_EQ(again.rows(), mel.rows());
    const double r = MelCorrelation(mel, again);
    EXPECT_GT(r, 0.9) << "round-trip mel correlation " << r << " with " << nnls
                      << " refinement steps";
  }
}

TEST(SynthesizerTest, WritesWavFeaturesAndMetadata) {
  const Models& m = Models::Get();
  const Synthesizer synth = Synthesizer::FromDir(m.ckpt_dir, QuickConfig());
  TempDir out("synth_out");
  const long extract_calls = StyleExtractorModel::ExtractCallCount();
  const std::string stem = out / "one";
  SynthesisContext ctx;
  ctx.past = {"the day was calm"};
  const auto window = MakeWindow("the bold king met a bird", ctx, synth.context_k());
  const SynthesisResult r = synth.SynthesizeToFiles("the bold king met a bird", window, stem);
  EXPECT_EQ(StyleExtractorModel::ExtractCallCount(), extract_calls);

  const WavHeaderInfo h = ReadWavHeader(stem + ".wav");
  EXPECT_EQ(h.sample_rate, 16000);
  EXPECT_EQ(h.channels, 1);
  EXPECT_EQ(h.bits_per_sample, 16);
  EXPECT_EQ(h.format, 1);
  EXPECT_GT(h.frames, 0u);

  const AcousticFeatures cached = ReadFeatureCache(stem + ".stb");
  EXPECT_EQ(cached.frames(), r.features.frames());
  EXPECT_EQ(cached.f0.size(), cached.frames());
  long total = 0;
  for (int d : r.acoustic.durations) {
    EXPECT_GE(d, 1);
    total += d;
  }
  EXPECT_EQ(total, r.acoustic.mel.rows());

  std::ifstream in(stem + ".json");
  const json meta = json::parse(in);
  EXPECT_EQ(meta["text"], "the bold king met a bird");
  EXPECT_EQ(meta["phonemes"].size(), r.phonemes.size());
  EXPECT_EQ(meta["window"], window);
  EXPECT_EQ(meta["durations"].get<std::vector<int>>(), r.acoustic.durations);
}

TEST(SynthesizerTest, DeterministicAcrossRuns) {
  const Models& m = Models::Get();
  TempDir out("synth_det");
  const auto window = ParagraphWindow({"one line", "two lines"}, 0, 2);
  for (const char* name : {"a", "b"}) {
    const Synthesizer synth = Synthesizer::FromDir(m.ckpt_dir, QuickConfig());
    synth.SynthesizeToFiles("one line", window, out / name);
  }
  EXPECT_EQ(ReadBytes(out / "a.stb"), ReadBytes(out / "b.stb"));
  EXPECT_EQ(ReadBytes(out / "a.wav"), ReadBytes(out / "b.wav"));
}

TEST(SynthesizerTest, ForcedDurationsAndContextChangesOutput) {
  const Models& m = Models::Get();
  const Synthesizer synth = Synthesizer::FromDir(m.ckpt_dir, QuickConfig());
  const std::string text = "bright morning";
  const auto phonemes = CharacterPhonemizer(synth.acoustic().phonemes()).Phonemize(text);
  const std::vector<int> durations(phonemes.size(), 3);
  const auto plain = synth.Synthesize(text, MakeWindow(text, {}, 2), durations);
  EXPECT_EQ(plain.acoustic.durations, durations);
  EXPECT_EQ(plain.acoustic.mel.rows(), static_cast<Eigen::Index>(3 * phonemes.size()));
  SynthesisContext ctx;
  ctx.past = {"the storm broke the windows"};
  const auto with_ctx = synth.Synthesize(text, MakeWindow(text, ctx, 2), durations);
  EXPECT_GT((plain.acoustic.mel - with_ctx.acoustic.mel).cwiseAbs().maxCoeff(), 0.0);
}

TEST(SynthesizerTest, ParagraphNamingAndConcatenation) {
  const Models& m = Models::Get();
  const Synthesizer synth = Synthesizer::FromDir(m.ckpt_dir, QuickConfig());
  TempDir out("synth_par");
  const std::vector<std::string> sentences = {"first one", "second one", "third one"};
  const auto paths = synth.SynthesizeParagraph(sentences, out / "p");
  ASSERT_EQ(paths.size(), 3u);
  size_t total = 0;
  for (size_t i = 0; i < 3; ++i) {
    const std::string name = "000" + std::to_string(i + 1);
    EXPECT_EQ(fs::path(paths[i]).filename(), name + ".wav");
    total += ReadWavHeader(paths[i]).frames;
    std::ifstream in(out / ("p/" + name + ".json"));
    EXPECT_EQ(json::parse(in)["window"], ParagraphWindow(sentences, i, 2));
  }
  EXPECT_EQ(ReadWavHeader(out / "p/paragraph.wav").frames, total);
}

TEST(SynthesizerTest, ExternalVocoderHook) {
  const Models& m = Models::Get();
  TempDir out("synth_voc");
  Waveform tone;
  tone.samples.assign(4000, 0.25);
  const std::string tone_path = out / "tone.wav";
  WriteWav(tone_path, tone);
  Config cfg = QuickConfig();
  cfg.Set("synthesis.vocoder_command", "test -s {mel} && cp " + tone_path + " {wav}");
  const Synthesizer synth = Synthesizer::FromDir(m.ckpt_dir, cfg);
  const auto r = synth.Synthesize("hello", MakeWindow("hello", {}, 2));
  EXPECT_EQ(r.wav.samples.size(), tone.samples.size());
  cfg.Set("synthesis.vocoder_command", "false");
  const Synthesizer failing = Synthesizer::FromDir(m.ckpt_dir, cfg);
  EXPECT_EQ(CodeOf([&] { failing.Synthesize("hello", MakeWindow("hello", {}, 2)); }),
            ErrorCode::kIoError);
}

TEST(SynthesizerTest, ManifestSynthesisIsTeacherForced) {
  const Models& m = Models::Get();
  const auto& fx = PreparedFixture::Get();
  const Synthesizer synth = Synthesizer::FromDir(m.ckpt_dir, QuickConfig());
  TempDir out("synth_manifest");
  const int n = SynthesizeManifest(synth, fx.manifest, out.str());
  const auto test = fx.manifest.Split("test");
  ASSERT_EQ(n, static_cast<int>(test.size()));
  for (const UtteranceRecord* r : test) {
    const AcousticFeatures f = ReadFeatureCache(out / (r->id + ".stb"));
    EXPECT_EQ(f.frames(), r->frames());
    std::ifstream in(out / (r->id + ".json"));
    const json meta = json::parse(in);
    EXPECT_EQ(meta["durations"].get<std::vector<int>>(), r->durations);
    EXPECT_EQ(meta["predicted_durations"].size(), r->durations.size());
    EXPECT_EQ(meta["window"], BuildContextWindow(fx.manifest, r->id, 2));
  }
}

TEST(SynthesizerTest, Errors) {
  const Models& m = Models::Get();
  const Synthesizer synth = Synthesizer::FromDir(m.ckpt_dir, QuickConfig());
  EXPECT_EQ(CodeOf([&] { synth.Synthesize("123 !!", MakeWindow("x", {}, 2)); }),
            ErrorCode::kPhonemizeError);
  EXPECT_EQ(CodeOf([&] { synth.Synthesize("caf\xc3\xa9", MakeWindow("x", {}, 2)); }),
            ErrorCode::kPhonemizeError);
  TempDir empty("synth_empty");
  EXPECT_EQ(CodeOf([&] { Synthesizer::FromDir(empty.str(), QuickConfig()); }),
            ErrorCode::kCheckpointMissing);
  fs::copy_file(m.ckpt_dir + "/best.ckpt", empty / "last.ckpt");
  EXPECT_EQ(CodeOf([&] { Synthesizer::FromDir(empty.str(), QuickConfig()); }),
            ErrorCode::kCheckpointMissing);
  fs::copy_file(m.ckpt_dir + "/text_style.ckpt", empty / "text_style.ckpt");
  EXPECT_NO_THROW(Synthesizer::FromDir(empty.str(), QuickConfig()));
}

TEST(SynthesizerTest, CheckpointChoice) {
  const Models& m = Models::Get();
  const auto& fx = PreparedFixture::Get();
  TempDir dir("synth_choice");
  fs::copy_file(m.ckpt_dir + "/best.ckpt", dir / "best.ckpt");
  fs::copy_file(m.ckpt_dir + "/text_style.ckpt", dir / "text_style.ckpt");
  AcousticModel other(AcousticConfig::FromConfig(testing::FixtureConfig()),
                      fx.manifest.phoneme_inventory(), 11);
  other.Save(dir / "last.ckpt");
  const std::string text = "the bold king met a bird";
  const auto window = MakeWindow(text, {}, 2);
  auto mel_with = [&](const std::string& which) {
    Config cfg = QuickConfig();
    cfg.Set("synthesis.checkpoint", which);
    return Synthesizer::FromDir(dir.str(), cfg).Synthesize(text, window).acoustic.mel;
  };
  const Matrix reference =
      Synthesizer::FromDir(m.ckpt_dir, QuickConfig()).Synthesize(text, window).acoustic.mel;
  const Matrix best = mel_with("best");
  ASSERT_EQ(best.rows(), reference.rows());
  EXPECT_EQ(best, reference);
  const Matrix last = mel_with("last");
  EXPECT_TRUE(last.rows() != best.rows() || last != best);
  EXPECT_EQ(CodeOf([&] { mel_with("newest"); }), ErrorCode::kBadConfig);
}

}  // namespace
}  // namespace duopath
