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

// Text plus context to waveform. Only the text style encoder and the acoustic
// model are loaded; the style extractor is a training-time teacher.
//
// Every synthesized sentence produces three files sharing a stem:
//   <stem>.wav   16 kHz mono 16-bit PCM
//   <stem>.stb   feature cache: predicted mel, f0 and energy of the waveform
//   <stem>.json  text, phonemes, context window and predicted durations

#ifndef DUOPATH_SYNTHESIS_H_
#define DUOPATH_SYNTHESIS_H_

#include <memory>
#include <string>
#include <vector>

#include "duopath/acoustic_model.h"
#include "duopath/audio.h"
#include "duopath/config.h"
#include "duopath/features.h"
#include "duopath/text_style.h"

namespace duopath {

// Linear magnitudes from natural-log mel via the filterbank pseudo-inverse,
// clipped at zero, then refined by `nnls_iterations` multiplicative updates
// of the non-negative least-squares fit to the mel energies.
Matrix MelToLinear(const Matrix& log_mel, const FeatureConfig& cfg, int nnls_iterations = 0);

// Griffin-Lim reconstruction of a log-mel spectrogram; the waveform yields
// exactly mel.rows() analysis frames.
Waveform MelToWaveform(const Matrix& log_mel, const FeatureConfig& cfg,
                       const GriffinLimOptions& opts, int nnls_iterations = 0);

// Mean over mel bins of the Pearson correlation across time; bins that are
// constant in either input are skipped.
double MelCorrelation(const Matrix& a, const Matrix& b);

// Context as read from a file: either {"past": [...], "future": [...]} or a
// JSON array holding the whole 2k+1 window (empty means no context).
struct SynthesisContext {
  std::vector<std::string> past;
  std::vector<std::string> future;
  std::vector<std::string> window;
  bool explicit_window = false;
};

SynthesisContext ReadContextFile(const std::string& path);

// 2k+1 window centered on `text`; missing slots are kNullContext. A window
// of the wrong length raises BadWindow.
std::vector<std::string> MakeWindow(const std::string& text, const SynthesisContext& ctx,
                                    int k);

// Window for sentence `index` of a paragraph.
std::vector<std::string> ParagraphWindow(const std::vector<std::string>& sentences,
                                         size_t index, int k);

struct SynthesisOptions {
  GriffinLimOptions griffin_lim;
  int nnls_iterations = 100;
  // When set, "{mel}" and "{wav}" are replaced by file paths and the command
  // renders the waveform from the mel cache instead of Griffin-Lim.
  std::string vocoder_command;
  // Which acoustic checkpoint of a run directory to load: "best" or "last".
  std::string checkpoint = "best";

  static SynthesisOptions FromConfig(const Config& cfg);
};

struct SynthesisResult {
  std::vector<std::string> phonemes;
  std::vector<std::string> window;
  Synthesis acoustic;
  Waveform wav;
  AcousticFeatures features;
};

class Synthesizer {
 public:
  Synthesizer(AcousticModel acoustic, TextStyleModel text, FeatureConfig features,
              SynthesisOptions options);

  // Loads <dir>/best.ckpt or <dir>/last.ckpt as chosen by
  // synthesis.checkpoint (falling back to the other one) and
  // <dir>/text_style.ckpt; raises CheckpointMissing otherwise.
  static Synthesizer FromDir(const std::string& dir, const Config& cfg);

  const AcousticModel& acoustic() const { return acoustic_; }
  const TextStyleModel& text_model() const { return text_; }
  int context_k() const { return acoustic_.config().context_k; }

  // Raises PhonemizeError when the text cannot be phonemized. Non-empty
  // `durations` force the frame count of every phoneme.
  SynthesisResult Synthesize(const std::string& text, const std::vector<std::string>& window,
                             const std::vector<int>& durations = {}) const;

  // Same as Synthesize with the phoneme sequence given explicitly.
  SynthesisResult SynthesizePhonemes(const std::string& text,
                                     const std::vector<std::string>& phonemes,
                                     const std::vector<std::string>& window,
                                     const std::vector<int>& durations = {}) const;

  // Writes <stem>.wav, <stem>.stb and <stem>.json for one sentence.
  SynthesisResult SynthesizeToFiles(const std::string& text,
                                    const std::vector<std::string>& window,
                                    const std::string& stem,
                                    const std::vector<int>& durations = {},
                                    const nlohmann::json& extra = nlohmann::json::object()) const;

  // Writes the three files of an existing result.
  void WriteResult(const std::string& text, const SynthesisResult& r, const std::string& stem,
                   const nlohmann::json& extra = nlohmann::json::object()) const;

  // One 0001.wav ... NNNN.wav per sentence in input order, plus
  // paragraph.wav when `concatenate` is set. Returns the wav paths.
  std::vector<std::string> SynthesizeParagraph(const std::vector<std::string>& sentences,
                                               const std::string& out_dir,
                                               bool concatenate = true) const;

 private:
  AcousticModel acoustic_;
  TextStyleModel text_;
  FeatureConfig features_;
  SynthesisOptions options_;
  std::unique_ptr<CharacterPhonemizer> phonemizer_;
};

// Synthesizes every record of `split` (all records when empty) into
// <out_dir>/<id>.{wav,stb,json} with the manifest phonemes and context. With
// `teacher_forced` the reference durations set the frame count so features
// line up with the reference; the json also carries the free-running
// "predicted_durations". Returns the number of utterances written.
int SynthesizeManifest(const Synthesizer& synth, const Manifest& manifest,
                       const std::string& out_dir, const std::string& split = "test",
                       bool teacher_forced = true);

}  // namespace duopath

#endif  // DUOPATH_SYNTHESIS_H_
