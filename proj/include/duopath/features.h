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

#ifndef DUOPATH_FEATURES_H_
#define DUOPATH_FEATURES_H_

#include <map>
#include <string>
#include <vector>

#include "duopath/audio.h"
#include "duopath/common.h"
#include "duopath/config.h"
#include "json.hpp"

namespace duopath {

struct FeatureConfig {
  int sample_rate = 16000;
  int n_mels = 80;
  int win_length = 1200;
  int hop_length = 240;
  int n_fft = 1200;
  double f_min = 0.0;
  double f_max = 8000.0;
  double f0_min = 60.0;
  double f0_max = 500.0;
  double yin_threshold = 0.15;
  double log_floor = 1e-5;
  int low_band = 20;

  static FeatureConfig FromConfig(const Config& cfg);
  double FrameSeconds() const {
    return static_cast<double>(hop_length) / sample_rate;
  }
};

struct AcousticFeatures {
  Matrix mel;      // T x n_mels, natural-log magnitudes
  Vector f0;       // T, Hz, 0 at unvoiced frames
  Vector energy;   // T, L2 norm of the magnitude spectrum
  Matrix mel20;    // T x low_band, leading columns of mel

  Eigen::Index frames() const { return mel.rows(); }
};

// Leading `bins` columns of `mel`, copied bit-exactly.
Matrix LowBand(const Matrix& mel, int bins);

AcousticFeatures ExtractFeatures(const Waveform& audio, const FeatureConfig& cfg);

// Binary feature cache: 16-byte header (magic "STYB", u32 version, u32 T,
// u32 n_mels) then mel (T*n_mels), f0 (T) and energy (T) as little-endian
// float32. mel20 is rebuilt from mel on load.
void WriteFeatureCache(const std::string& path, const AcousticFeatures& feats,
                       int low_band = 20);
AcousticFeatures ReadFeatureCache(const std::string& path, int low_band = 20);

// Unvoiced gaps filled by linear interpolation between voiced neighbours;
// edges hold the nearest voiced value. All-unvoiced input stays zero.
Vector ContinuousF0(const Vector& f0);

// Mean of frame values over each phoneme's span; zero-duration phonemes get
// the value of the nearest preceding span (or the first span).
Vector PhonemeAverage(const Vector& frame_values, const std::vector<int>& durations);

// Z-score statistics for pitch and energy.
struct ProsodyStats {
  struct Moments {
    double mean = 0.0;
    double std = 1.0;
  };
  Moments f0, energy;
  std::map<std::string, Moments> speaker_f0, speaker_energy;
  bool per_speaker = false;

  Moments F0For(const std::string& speaker) const;
  Moments EnergyFor(const std::string& speaker) const;

  nlohmann::json ToJson() const;
  static ProsodyStats FromJson(const nlohmann::json& j);
};

class ProsodyStatsAccumulator {
 public:
  void Add(const std::string& speaker, const AcousticFeatures& feats);
  ProsodyStats Finish(bool per_speaker) const;

 private:
  struct Sums {
    double n = 0, sum = 0, sq = 0;
    void Add(double v) { n += 1; sum += v; sq += v * v; }
    ProsodyStats::Moments Get() const;
  };
  Sums f0_, energy_;
  std::map<std::string, Sums> speaker_f0_, speaker_energy_;
};

// Normalized continuous pitch and energy per frame.
struct NormalizedProsody {
  Vector f0;
  Vector energy;
};
NormalizedProsody NormalizeProsody(const AcousticFeatures& feats,
                                   const ProsodyStats& stats,
                                   const std::string& speaker);

}  // namespace duopath

#endif  // DUOPATH_FEATURES_H_
