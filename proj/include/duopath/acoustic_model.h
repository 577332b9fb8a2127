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

// Two-path acoustic model. The phoneme path runs encoder, length regulator and
// mel decoder; the style path runs the utterance style vector through the
// variance adaptor and the context-aware style decoder, whose output is
// injected into every decoder block.

#ifndef DUOPATH_ACOUSTIC_MODEL_H_
#define DUOPATH_ACOUSTIC_MODEL_H_

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "duopath/checkpoint.h"
#include "duopath/config.h"
#include "duopath/corpus.h"
#include "duopath/nn.h"
#include "duopath/style_extractor.h"
#include "duopath/text_style.h"

namespace duopath {

enum class Ablation { kNone, kNoStyleEncoder, kNoStyleDecoder, kNoStyleExtractor };

std::string AblationName(Ablation a);
// Accepts none, no_style_encoder, no_style_decoder, no_style_extractor.
Ablation ParseAblation(const std::string& name);

struct AcousticConfig {
  int d_model = 256;
  int d_style = 256;
  int encoder_layers = 4;
  int decoder_layers = 4;
  int heads = 2;
  int filter = 1024;
  int kernel = 9;
  int predictor_filter = 256;
  int predictor_kernel = 3;
  int style_heads = 2;
  int style_conv_layers = 3;
  int style_kernel = 5;
  int n_mels = 80;
  int context_k = 2;
  Ablation ablation = Ablation::kNone;

  static AcousticConfig FromConfig(const Config& cfg);
  nlohmann::json ToJson() const;
  static AcousticConfig FromJson(const nlohmann::json& j);
};

// Repeats row i of `h` durations[i] times. Raises EmptyExpansion when every
// duration is zero.
ag::Var LengthRegulate(const ag::Var& h, const std::vector<int>& durations);

// Frames per phoneme from log(d + 1) predictions: round half up, at least 1.
std::vector<int> DurationsFromLog(const Vector& log_durations);

struct VarianceTargets {
  std::vector<int> durations;
  // Phoneme-level normalized values; empty vectors fall back to predictions.
  Vector pitch;
  Vector energy;
};

struct VarianceResult {
  ag::Var dur_pred;     // N x 1, log(d + 1)
  ag::Var pitch_pred;   // N x 1
  ag::Var energy_pred;  // N x 1
  ag::Var h_p_frame;    // T x d_model
  ag::Var h_s_frame;    // T x d_style
  std::vector<int> durations;
};

struct DecoderResult {
  ag::Var mel;     // T x n_mels
  ag::Var hidden;  // T x d_model
};

// Everything one utterance contributes to a TTS training step. Teacher
// outputs are computed once because both teachers stay frozen.
struct TtsExample {
  std::string id;
  std::vector<int> phonemes;
  std::vector<int> durations;
  Vector pitch;    // N, phoneme-averaged normalized continuous f0
  Vector energy;   // N, phoneme-averaged normalized energy
  Matrix mel;      // T x n_mels
  RowVector h_s;   // d_style
  Matrix h_cs;     // (2k+1) x d_style
  Matrix h_se;     // T x d_style
};

struct TtsForward {
  VarianceResult variance;
  ag::Var h_sd;  // T x d_style; undefined without the style decoder
  DecoderResult decoder;
};

struct TtsLosses {
  ag::Var total, tts, mel, duration, pitch, energy, style;
};

struct Synthesis {
  Matrix mel;
  std::vector<int> durations;
  Vector pitch;   // phoneme-level predictions
  Vector energy;
};

class AcousticModel {
 public:
  AcousticModel(const AcousticConfig& cfg, std::vector<std::string> phonemes,
                uint64_t seed);

  static AcousticModel Load(const std::string& path);
  void Save(const std::string& path) const;

  const AcousticConfig& config() const { return cfg_; }
  const std::vector<std::string>& phonemes() const { return phonemes_; }
  std::vector<int> PhonemeIds(const std::vector<std::string>& symbols) const;
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  // Trainable scalar count per parameter group.
  std::map<std::string, size_t> GroupInventory() const;
  bool has_style_decoder() const { return cfg_.ablation != Ablation::kNoStyleDecoder; }

  ag::Var EncodePhonemes(Tape& tape, const std::vector<int>& ids) const;
  // Teacher forcing applies whenever `targets` is given; a training tape
  // without targets raises MissingTargets.
  VarianceResult VarianceAdapt(Tape& tape, const ag::Var& h_p, const RowVector& h_s,
                               const VarianceTargets* targets) const;
  // `attention` receives the per-head weights (T x (2k+1)) when non-null.
  ag::Var StyleDecode(Tape& tape, const ag::Var& h_s_frame, const Matrix& h_cs,
                      std::vector<Matrix>* attention = nullptr) const;
  // `h_sd` is ignored without the style decoder; `h_s_frame` is then added
  // to the decoder input instead, through a projection only when d_style
  // differs from d_model.
  DecoderResult MelDecode(Tape& tape, const ag::Var& h_p_frame, const ag::Var& h_sd,
                          const ag::Var& h_s_frame = ag::Var()) const;

  TtsForward Forward(Tape& tape, const TtsExample& ex) const;
  TtsLosses Loss(const TtsForward& out, const TtsExample& ex, double alpha) const;

  // Free-running synthesis; `durations` overrides the duration predictor
  // when non-empty.
  Synthesis Infer(const std::vector<int>& ids, const RowVector& h_s, const Matrix& h_cs,
                  const std::vector<int>& durations = {}) const;

 private:
  struct Predictor {
    Conv1d conv1, conv2;
    LayerNorm ln1, ln2;
    Linear out;
  };
  Predictor MakePredictor(const std::string& name, Rng& rng);
  ag::Var RunPredictor(Tape& tape, const Predictor& p, const ag::Var& x) const;
  RowVector StyleInput(const RowVector& h_s) const;

  AcousticConfig cfg_;
  std::vector<std::string> phonemes_;
  ParameterSet params_;
  Embedding phoneme_table_;
  std::vector<FftBlock> encoder_, decoder_;
  Linear style_proj_;
  Predictor duration_, pitch_, energy_;
  Conv1d pitch_embed_, energy_embed_;
  MultiHeadAttention cross_attn_;
  std::vector<Conv1d> style_convs_;
  std::vector<BatchNorm> style_bns_;
  Linear style_out_;
  std::vector<Linear> inject_;
  Linear style_in_;
  Linear mel_out_;
};

// The effective style-loss weight: zero for the no_style_extractor ablation.
double EffectiveAlpha(double alpha, Ablation ablation);

// Builds training examples for `records`; teacher outputs use eval mode.
std::vector<TtsExample> BuildTtsExamples(const Manifest& manifest,
                                         const std::vector<const UtteranceRecord*>& records,
                                         const ProsodyStats& stats,
                                         const AcousticModel& model,
                                         const TextStyleModel& text_model,
                                         StyleExtractorModel& extractor);

struct TtsTrainConfig {
  int batch_size = 16;
  int epochs = 50;
  double learning_rate = 1e-3;
  int warmup_steps = 400;
  double grad_clip = 1.0;
  double alpha = 1.0;
  uint64_t seed = 1;

  static TtsTrainConfig FromConfig(const Config& cfg);
};

struct TtsEpoch {
  int epoch = 0;
  long step = 0;
  double total = 0, tts = 0, mel = 0, duration = 0, pitch = 0, energy = 0, style = 0;
  double val_total = -1.0;  // negative when there is no validation split
  double val_mel = -1.0;
};

struct TtsTrainResult {
  std::vector<TtsEpoch> epochs;
  // Total loss of the first batch before any update.
  double initial_total = 0.0;
  bool stopped = false;
};

// Raises FrozenContractViolation unless both teachers are frozen.
TtsTrainResult TrainAcousticModel(AcousticModel& model, const Manifest& manifest,
                                  const TextStyleModel& text_model,
                                  StyleExtractorModel& extractor,
                                  const TtsTrainConfig& cfg,
                                  const std::function<void(const TtsEpoch&)>& on_epoch = nullptr,
                                  const TrainControl& control = TrainControl());

}  // namespace duopath

#endif  // DUOPATH_ACOUSTIC_MODEL_H_
