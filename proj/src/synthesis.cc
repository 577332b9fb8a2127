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

#include "duopath/synthesis.h"

#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "duopath/corpus.h"

namespace duopath {

namespace fs = std::filesystem;
using nlohmann::json;

Matrix MelToLinear(const Matrix& log_mel, const FeatureConfig& cfg, int nnls_iterations) {
  if (log_mel.cols() != cfg.n_mels) {
    throw Error(ErrorCode::kShapeMismatch, "mel width differs from n_mels");
  }
  const Matrix fb = MelFilterbank(cfg.sample_rate, cfg.n_fft, cfg.n_mels, cfg.f_min, cfg.f_max);
  const Matrix pinv = Eigen::CompleteOrthogonalDecomposition<Matrix>(fb).pseudoInverse();
  const Matrix mel = log_mel.array().exp().matrix();
  Matrix linear = (mel * pinv.transpose()).cwiseMax(0.0);
  if (nnls_iterations <= 0) return linear;
  // Zeros are fixed points of the update, so start strictly positive.
  linear.array() += 1e-6 * std::max(linear.maxCoeff(), 1e-12);
  const Matrix numer = mel * fb;
  for (int it = 0; it < nnls_iterations; ++it) {
    const Matrix denom = (linear * fb.transpose()) * fb;
    linear.array() *= numer.array() / (denom.array() + 1e-30);
  }
  return linear;
}

Waveform MelToWaveform(const Matrix& log_mel, const FeatureConfig& cfg,
                       const GriffinLimOptions& opts, int nnls_iterations) {
  if (log_mel.rows() == 0) throw Error(ErrorCode::kShapeMismatch, "empty mel spectrogram");
  Stft stft(cfg.n_fft, cfg.win_length, cfg.hop_length);
  Waveform w;
  w.sample_rate = cfg.sample_rate;
  w.samples = GriffinLim(MelToLinear(log_mel, cfg, nnls_iterations), stft, opts);
  const size_t want = stft.SignalLength(static_cast<int>(log_mel.rows()));
  w.samples.resize(want, 0.0);
  double peak = 0.0;
  for (double v : w.samples) peak = std::max(peak, std::abs(v));
  if (peak > 1.0) {
    for (double& v : w.samples) v /= peak;
  }
  return w;
}

double MelCorrelation(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols() || a.rows() < 2) {
    throw Error(ErrorCode::kShapeMismatch, "mel correlation needs equal shapes, T >= 2");
  }
  double sum = 0.0;
  int used = 0;
  for (Eigen::Index c = 0; c < a.cols(); ++c) {
    const Vector x = a.col(c).array() - a.col(c).mean();
    const Vector y = b.col(c).array() - b.col(c).mean();
    const double nx = x.norm();
    const double ny = y.norm();
    if (nx < 1e-12 || ny < 1e-12) continue;
    sum += x.dot(y) / (nx * ny);
    ++used;
  }
  if (used == 0) throw Error(ErrorCode::kShapeMismatch, "every mel bin is constant");
  return sum / used;
}

SynthesisContext ReadContextFile(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open context file " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kBadWindow, "context file is not JSON: " + std::string(e.what()));
  }
  SynthesisContext ctx;
  if (j.is_array()) {
    ctx.window = j.get<std::vector<std::string>>();
    ctx.explicit_window = !ctx.window.empty();
  } else if (j.is_object()) {
    ctx.past = j.value("past", std::vector<std::string>{});
    ctx.future = j.value("future", std::vector<std::string>{});
  } else {
    throw Error(ErrorCode::kBadWindow, "context must be an object or an array");
  }
  return ctx;
}

std::vector<std::string> MakeWindow(const std::string& text, const SynthesisContext& ctx,
                                    int k) {
  const size_t size = 2 * static_cast<size_t>(k) + 1;
  if (ctx.explicit_window) {
    if (ctx.window.size() != size) {
      throw Error(ErrorCode::kBadWindow, "context window must hold " + std::to_string(size) +
                                             " sentences");
    }
    std::vector<std::string> w = ctx.window;
    w[k] = text;
    return w;
  }
  std::vector<std::string> w(size, kNullContext);
  w[k] = text;
  for (int i = 1; i <= k; ++i) {
    const long p = static_cast<long>(ctx.past.size()) - i;
    if (p >= 0) w[k - i] = ctx.past[p];
    if (i - 1 < static_cast<int>(ctx.future.size())) w[k + i] = ctx.future[i - 1];
  }
  return w;
}

std::vector<std::string> ParagraphWindow(const std::vector<std::string>& sentences,
                                         size_t index, int k) {
  std::vector<std::string> w(2 * static_cast<size_t>(k) + 1, kNullContext);
  for (int off = -k; off <= k; ++off) {
    const long j = static_cast<long>(index) + off;
    if (j >= 0 && j < static_cast<long>(sentences.size())) w[off + k] = sentences[j];
  }
  return w;
}

SynthesisOptions SynthesisOptions::FromConfig(const Config& cfg) {
  SynthesisOptions o;
  o.griffin_lim.iterations = cfg.GetInt("synthesis.griffin_lim_iterations", 60);
  o.griffin_lim.momentum = cfg.GetDouble("synthesis.griffin_lim_momentum", 0.99);
  o.nnls_iterations = cfg.GetInt("synthesis.nnls_iterations", o.nnls_iterations);
  o.griffin_lim.seed = static_cast<uint64_t>(cfg.GetInt("seed", 0));
  o.vocoder_command = cfg.GetString("synthesis.vocoder_command", "");
  o.checkpoint = cfg.GetString("synthesis.checkpoint", o.checkpoint);
  if (o.checkpoint != "best" && o.checkpoint != "last") {
    throw Error(ErrorCode::kBadConfig, "synthesis.checkpoint must be best or last");
  }
  return o;
}

Synthesizer::Synthesizer(AcousticModel acoustic, TextStyleModel text, FeatureConfig features,
                         SynthesisOptions options)
    : acoustic_(std::move(acoustic)),
      text_(std::move(text)),
      features_(features),
      options_(std::move(options)),
      phonemizer_(std::make_unique<CharacterPhonemizer>(acoustic_.phonemes())) {
  if (acoustic_.config().d_style != text_.d_style()) {
    throw Error(ErrorCode::kBadCheckpoint, "text style and acoustic checkpoints disagree on d_style");
  }
  if (acoustic_.config().n_mels != features_.n_mels) {
    throw Error(ErrorCode::kBadConfig, "n_mels differs from the acoustic checkpoint");
  }
  text_.SetFrozen(true);
}

Synthesizer Synthesizer::FromDir(const std::string& dir, const Config& cfg) {
  const SynthesisOptions options = SynthesisOptions::FromConfig(cfg);
  const fs::path d(dir);
  const bool best_first = options.checkpoint == "best";
  fs::path acoustic = d / (best_first ? "best.ckpt" : "last.ckpt");
  if (!fs::exists(acoustic)) acoustic = d / (best_first ? "last.ckpt" : "best.ckpt");
  if (!fs::exists(acoustic)) {
    throw Error(ErrorCode::kCheckpointMissing, "no acoustic checkpoint in " + dir);
  }
  const fs::path text = d / "text_style.ckpt";
  if (!fs::exists(text)) {
    throw Error(ErrorCode::kCheckpointMissing, "no text_style.ckpt in " + dir);
  }
  return Synthesizer(AcousticModel::Load(acoustic.string()), TextStyleModel::Load(text.string()),
                     FeatureConfig::FromConfig(cfg), options);
}

namespace {

Waveform RunExternalVocoder(const std::string& command, const AcousticFeatures& feats,
                            int low_band) {
  const fs::path tmp = fs::temp_directory_path() /
                       ("duopath_vocoder_" + std::to_string(::getpid()));
  fs::create_directories(tmp);
  const std::string mel = (tmp / "mel.stb").string();
  const std::string wav = (tmp / "out.wav").string();
  WriteFeatureCache(mel, feats, low_band);
  std::string cmd = command;
  for (const auto& [key, value] : {std::pair{std::string("{mel}"), mel},
                                   std::pair{std::string("{wav}"), wav}}) {
    for (size_t p = cmd.find(key); p != std::string::npos; p = cmd.find(key, p + value.size())) {
      cmd.replace(p, key.size(), value);
    }
  }
  const int rc = std::system(cmd.c_str());
  if (rc != 0 || !fs::exists(wav)) {
    fs::remove_all(tmp);
    throw Error(ErrorCode::kIoError, "external vocoder failed: " + command);
  }
  Waveform w = ReadWav(wav);
  fs::remove_all(tmp);
  return w;
}

}  // namespace

SynthesisResult Synthesizer::Synthesize(const std::string& text,
                                        const std::vector<std::string>& window,
                                        const std::vector<int>& durations) const {
  return SynthesizePhonemes(text, phonemizer_->Phonemize(text), window, durations);
}

SynthesisResult Synthesizer::SynthesizePhonemes(const std::string& text,
                                                const std::vector<std::string>& phonemes,
                                                const std::vector<std::string>& window,
                                                const std::vector<int>& durations) const {
  SynthesisResult r;
  r.phonemes = phonemes;
  r.window = window;
  const std::vector<int> ids = acoustic_.PhonemeIds(r.phonemes);
  r.acoustic = acoustic_.Infer(ids, text_.EncodeStyle(text), text_.EncodeContext(window),
                               durations);
  AcousticFeatures mel_only;
  mel_only.mel = r.acoustic.mel;
  mel_only.mel20 = LowBand(r.acoustic.mel, features_.low_band);
  mel_only.f0 = Vector::Zero(r.acoustic.mel.rows());
  mel_only.energy = Vector::Zero(r.acoustic.mel.rows());
  r.wav = options_.vocoder_command.empty()
              ? MelToWaveform(r.acoustic.mel, features_, options_.griffin_lim,
                              options_.nnls_iterations)
              : RunExternalVocoder(options_.vocoder_command, mel_only, features_.low_band);
  if (r.wav.sample_rate != features_.sample_rate) {
    throw Error(ErrorCode::kSampleRateMismatch, "vocoder output sample rate differs");
  }
  AcousticFeatures measured = ExtractFeatures(r.wav, features_);
  const Eigen::Index t = std::min(measured.frames(), r.acoustic.mel.rows());
  r.features.mel = r.acoustic.mel.topRows(t);
  r.features.mel20 = LowBand(r.features.mel, features_.low_band);
  r.features.f0 = measured.f0.head(t);
  r.features.energy = measured.energy.head(t);
  return r;
}

SynthesisResult Synthesizer::SynthesizeToFiles(const std::string& text,
                                               const std::vector<std::string>& window,
                                               const std::string& stem,
                                               const std::vector<int>& durations,
                                               const json& extra) const {
  SynthesisResult r = Synthesize(text, window, durations);
  WriteResult(text, r, stem, extra);
  return r;
}

void Synthesizer::WriteResult(const std::string& text, const SynthesisResult& r,
                              const std::string& stem, const json& extra) const {
  if (fs::path(stem).has_parent_path()) fs::create_directories(fs::path(stem).parent_path());
  WriteWav(stem + ".wav", r.wav);
  WriteFeatureCache(stem + ".stb", r.features, features_.low_band);
  json meta = extra;
  meta["text"] = text;
  meta["phonemes"] = r.phonemes;
  meta["window"] = r.window;
  meta["durations"] = r.acoustic.durations;
  std::vector<double> seconds;
  for (int d : r.acoustic.durations) seconds.push_back(d * features_.FrameSeconds());
  meta["duration_seconds"] = seconds;
  meta["frames"] = r.acoustic.mel.rows();
  meta["sample_rate"] = r.wav.sample_rate;
  std::ofstream(stem + ".json") << meta.dump(2) << '\n';
}

std::vector<std::string> Synthesizer::SynthesizeParagraph(
    const std::vector<std::string>& sentences, const std::string& out_dir,
    bool concatenate) const {
  if (sentences.empty()) throw Error(ErrorCode::kEmptyCorpus, "no sentences to synthesize");
  fs::create_directories(out_dir);
  std::vector<std::string> paths;
  Waveform all;
  all.sample_rate = features_.sample_rate;
  const int width = std::max<int>(4, static_cast<int>(std::to_string(sentences.size()).size()));
  for (size_t i = 0; i < sentences.size(); ++i) {
    std::string name = std::to_string(i + 1);
    name.insert(0, static_cast<size_t>(width) - name.size(), '0');
    const std::string stem = (fs::path(out_dir) / name).string();
    const SynthesisResult r = SynthesizeToFiles(
        sentences[i], ParagraphWindow(sentences, i, context_k()), stem, {},
        {{"index", i}});
    paths.push_back(stem + ".wav");
    all.samples.insert(all.samples.end(), r.wav.samples.begin(), r.wav.samples.end());
  }
  if (concatenate) WriteWav((fs::path(out_dir) / "paragraph.wav").string(), all);
  return paths;
}

int SynthesizeManifest(const Synthesizer& synth, const Manifest& manifest,
                       const std::string& out_dir, const std::string& split,
                       bool teacher_forced) {
  std::vector<const UtteranceRecord*> records = manifest.Split(split);
  if (records.empty()) records = manifest.Split("");
  fs::create_directories(out_dir);
  const int k = synth.context_k();
  for (const UtteranceRecord* r : records) {
    const auto window = BuildContextWindow(manifest, r->id, k);
    const std::vector<int> ids = synth.acoustic().PhonemeIds(r->phonemes);
    const RowVector h_s = synth.text_model().EncodeStyle(r->text);
    const Matrix h_cs = synth.text_model().EncodeContext(window);
    const std::vector<int> predicted = synth.acoustic().Infer(ids, h_s, h_cs).durations;
    const SynthesisResult res = synth.SynthesizePhonemes(
        r->text, r->phonemes, window, teacher_forced ? r->durations : std::vector<int>());
    synth.WriteResult(r->text, res, (fs::path(out_dir) / r->id).string(),
                      {{"id", r->id},
                       {"teacher_forced", teacher_forced},
                       {"predicted_durations", predicted}});
  }
  return static_cast<int>(records.size());
}

}  // namespace duopath
