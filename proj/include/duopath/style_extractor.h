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

// VQ-VAE spectrogram style extractor over the low mel band.

#ifndef DUOPATH_STYLE_EXTRACTOR_H_
#define DUOPATH_STYLE_EXTRACTOR_H_

#include <functional>
#include <string>
#include <vector>

#include "duopath/checkpoint.h"
#include "duopath/config.h"
#include "duopath/corpus.h"
#include "duopath/nn.h"
#include "duopath/text_style.h"

namespace duopath {

struct QuantizeResult {
  Matrix z_q;
  std::vector<int> indices;
};

// Nearest codeword per row by squared Euclidean distance; ties go to the
// lowest index.
QuantizeResult Quantize(const Matrix& codebook, const Matrix& z);

// exp of the entropy of the empirical code distribution.
double CodebookPerplexity(const std::vector<long>& counts);

struct StyleExtractorConfig {
  int d_style = 256;
  int low_band = 20;
  int channels1 = 64;
  int channels2 = 128;
  int res_blocks = 3;
  int codebook_size = 512;
  double beta = 0.25;
  bool ema = false;
  double ema_decay = 0.99;
  // H_se for distillation is z_q unless this is set.
  bool pre_quantization = false;

  static StyleExtractorConfig FromConfig(const Config& cfg);
  nlohmann::json ToJson() const;
  static StyleExtractorConfig FromJson(const nlohmann::json& j);
};

// Conditioning streams for one utterance: normalized f0 and energy per frame
// and the utterance text style vector.
struct ExtractorInputs {
  Matrix mel20;   // T x low_band
  Vector f0;      // T
  Vector energy;  // T
  RowVector text_style;
  int speaker = 0;
};

ExtractorInputs MakeExtractorInputs(const AcousticFeatures& feats,
                                    const ProsodyStats& stats,
                                    const std::string& speaker_id,
                                    const RowVector& text_style, int speaker_index);

struct ExtractorForward {
  ag::Var z;         // T x d_style, encoder output
  ag::Var z_q;       // T x d_style, straight-through quantized
  ag::Var codewords; // T x d_style, gathered codewords (codebook gradient path)
  ag::Var recon;     // T x low_band, only when decoding
  std::vector<int> indices;
};

struct VqLosses {
  ag::Var total, recon, vq, commit;
};

class StyleExtractorModel {
 public:
  StyleExtractorModel(const StyleExtractorConfig& cfg,
                      std::vector<std::string> speakers, uint64_t seed);

  static StyleExtractorModel Load(const std::string& path);
  void Save(const std::string& path) const;

  const StyleExtractorConfig& config() const { return cfg_; }
  const std::vector<std::string>& speakers() const { return speakers_; }
  int SpeakerIndex(const std::string& speaker) const;
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  void SetFrozen(bool frozen) { params_.SetFrozen(frozen); }
  bool frozen() const { return params_.frozen(); }

  const Matrix& codebook() const { return codebook_->value; }
  Matrix& mutable_codebook() { return codebook_->value; }
  // Training-mode quantization events per code since the last reset.
  const std::vector<long>& usage() const { return usage_; }
  void ResetUsage() { usage_.assign(cfg_.codebook_size, 0); }

  ExtractorForward Forward(Tape& tape, const ExtractorInputs& in, bool decode);
  VqLosses Loss(const ExtractorForward& out, const Matrix& mel20) const;

  // Frame-level style codes (eval mode). Raises ShapeMismatch when the
  // streams disagree on T.
  Matrix ExtractStyle(const Matrix& mel20, const Vector& f0, const Vector& energy,
                      const RowVector& text_style);

  // EMA codebook update from one batch of (encoder output, indices).
  void EmaUpdate(const std::vector<std::pair<Matrix, std::vector<int>>>& batch);

  // Number of ExtractStyle calls made in this process.
  static long ExtractCallCount();

 private:
  ag::Var Encode(Tape& tape, const ExtractorInputs& in) const;
  ag::Var Decode(Tape& tape, const ag::Var& zq, int frames, int speaker) const;

  StyleExtractorConfig cfg_;
  std::vector<std::string> speakers_;
  ParameterSet params_;
  Conv2d enc_conv1_, enc_conv2_;
  BatchNorm enc_bn1_, enc_bn2_;
  Linear cond_f0_, cond_energy_, cond_text_;
  std::vector<std::pair<Conv2d, Conv2d>> enc_res_, dec_res_;
  std::vector<BatchNorm> enc_res_bn_, dec_res_bn_;
  Linear enc_out_, dec_in_;
  Embedding speaker_table_;
  Conv2d dec_conv1_, dec_conv2_, dec_out_;
  BatchNorm dec_bn1_, dec_bn2_;
  Parameter* codebook_ = nullptr;
  Parameter* ema_count_ = nullptr;
  Parameter* ema_sum_ = nullptr;
  std::vector<long> usage_;
  int w1_ = 0, w2_ = 0;
};

struct ExtractorTrainConfig {
  int batch_size = 16;
  int epochs = 30;
  double learning_rate = 1e-3;
  int warmup_steps = 400;
  double grad_clip = 1.0;
  // Random crop length in frames; 0 trains on whole utterances.
  int segment_frames = 0;
  bool restart_dead_codes = false;
  uint64_t seed = 1;

  static ExtractorTrainConfig FromConfig(const Config& cfg);
};

struct ExtractorEpoch {
  int epoch = 0;
  long step = 0;
  double recon = 0.0, vq = 0.0, commit = 0.0, total = 0.0;
  double perplexity = 0.0;
  int dead_codes = 0;
  double val_recon = -1.0;  // negative when there is no validation split
};

struct ExtractorPretrainResult {
  std::vector<ExtractorEpoch> epochs;
  // Reconstruction loss of the first batch before any update.
  double initial_recon = 0.0;
  // True when TrainControl::max_steps ended the run early.
  bool stopped = false;
};

// Loads every record of the manifest with a cached feature file and the text
// style vector of its sentence.
std::vector<ExtractorInputs> LoadExtractorInputs(
    const Manifest& manifest, const std::vector<const UtteranceRecord*>& records,
    const ProsodyStats& stats, const TextStyleModel& text_model,
    const StyleExtractorModel& extractor, int low_band);

ExtractorPretrainResult PretrainStyleExtractor(
    StyleExtractorModel& model, const Manifest& manifest,
    const TextStyleModel& text_model, const ExtractorTrainConfig& cfg,
    const std::function<void(const ExtractorEpoch&)>& on_epoch = nullptr,
    const TrainControl& control = TrainControl());

// Writes <out_dir>/<id>.json = {"id", "frames", "indices"} with the
// eval-mode codebook index of every frame, for each manifest record.
// Returns the number of files written.
int ExportCodes(StyleExtractorModel& model, const Manifest& manifest,
                const TextStyleModel& text_model, const std::string& out_dir);

}  // namespace duopath

#endif  // DUOPATH_STYLE_EXTRACTOR_H_
