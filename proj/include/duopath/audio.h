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

// Waveform I/O and short-time spectral analysis.

#ifndef DUOPATH_AUDIO_H_
#define DUOPATH_AUDIO_H_

#include <complex>
#include <span>
#include <string>
#include <vector>

#include "duopath/common.h"

namespace duopath {

struct Waveform {
  int sample_rate = 16000;
  std::vector<double> samples;  // mono, nominally in [-1, 1]
};

// Reads 16/32-bit PCM or 32-bit float RIFF/WAVE. Multi-channel input is
// rejected with InvalidAudio.
Waveform ReadWav(const std::string& path);
// Writes 16-bit PCM mono; samples are clipped to [-1, 1].
void WriteWav(const std::string& path, const Waveform& wav);

struct WavHeaderInfo {
  int sample_rate = 0;
  int channels = 0;
  int bits_per_sample = 0;
  int format = 0;  // 1 = PCM, 3 = IEEE float
  size_t frames = 0;
};
WavHeaderInfo ReadWavHeader(const std::string& path);

using ComplexFrames = std::vector<std::vector<std::complex<double>>>;

// Center-free STFT with a periodic Hann window. Frame t covers samples
// [t * hop, t * hop + win_length); the frame count for L samples is
// floor((L - win_length) / hop) + 1.
class Stft {
 public:
  Stft(int n_fft, int win_length, int hop_length);
  ~Stft();
  Stft(const Stft&) = delete;
  Stft& operator=(const Stft&) = delete;

  int n_fft() const { return n_fft_; }
  int num_bins() const { return n_fft_ / 2 + 1; }
  int NumFrames(size_t num_samples) const;
  // Signal length that yields exactly `frames` frames.
  size_t SignalLength(int frames) const;

  ComplexFrames Forward(std::span<const double> signal);
  Matrix Magnitude(std::span<const double> signal);
  // Weighted overlap-add inverse, normalized by the summed squared window
  // (floored at a tenth of its maximum near the signal ends).
  std::vector<double> Inverse(const ComplexFrames& frames);

  const std::vector<double>& window() const { return window_; }

 private:
  int n_fft_, win_length_, hop_;
  std::vector<double> window_;
  double* time_buf_ = nullptr;
  void* freq_buf_ = nullptr;
  void* forward_plan_ = nullptr;
  void* inverse_plan_ = nullptr;
};

// HTK-scale triangular filters, n_mels x (n_fft / 2 + 1).
Matrix MelFilterbank(int sample_rate, int n_fft, int n_mels, double f_min,
                     double f_max);

// Autocorrelation-difference (YIN-style) pitch of one frame; 0 when unvoiced.
double EstimatePitch(std::span<const double> frame, int sample_rate,
                     double f0_min, double f0_max, double threshold);

struct GriffinLimOptions {
  int iterations = 60;
  double momentum = 0.99;
  uint64_t seed = 0;
};

// Reconstructs a waveform from a T x (n_fft/2+1) linear magnitude
// spectrogram with the fast (momentum) Griffin-Lim iteration.
std::vector<double> GriffinLim(const Matrix& magnitude, Stft& stft,
                               const GriffinLimOptions& opts);

}  // namespace duopath

#endif  // DUOPATH_AUDIO_H_
