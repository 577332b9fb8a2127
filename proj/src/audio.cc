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

#include "duopath/audio.h"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <mutex>
#include <numbers>

namespace duopath {

namespace {

// FFTW planning is not thread-safe; execution with distinct plans is.
std::mutex& PlannerMutex() {
  static std::mutex m;
  return m;
}

template <typename T>
T ReadLe(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

template <typename T>
void WriteLe(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

struct ParsedWav {
  WavHeaderInfo info;
  std::streampos data_pos = 0;
  uint32_t data_bytes = 0;
};

ParsedWav ParseWav(std::ifstream& in, const std::string& path) {
  char tag[4];
  in.read(tag, 4);
  if (!in || std::memcmp(tag, "RIFF", 4) != 0) {
    throw Error(ErrorCode::kInvalidAudio, path + ": not a RIFF file");
  }
  ReadLe<uint32_t>(in);
  in.read(tag, 4);
  if (!in || std::memcmp(tag, "WAVE", 4) != 0) {
    throw Error(ErrorCode::kInvalidAudio, path + ": not a WAVE file");
  }
  ParsedWav parsed;
  bool have_fmt = false;
  while (in.read(tag, 4)) {
    const uint32_t size = ReadLe<uint32_t>(in);
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      parsed.info.format = ReadLe<uint16_t>(in);
      parsed.info.channels = ReadLe<uint16_t>(in);
      parsed.info.sample_rate = static_cast<int>(ReadLe<uint32_t>(in));
      ReadLe<uint32_t>(in);  // byte rate
      ReadLe<uint16_t>(in);  // block align
      parsed.info.bits_per_sample = ReadLe<uint16_t>(in);
      if (size > 16) in.seekg(size - 16, std::ios::cur);
      have_fmt = true;
    } else if (std::memcmp(tag, "data", 4) == 0) {
      if (!have_fmt) break;
      parsed.data_pos = in.tellg();
      parsed.data_bytes = size;
      const int bytes = parsed.info.bits_per_sample / 8;
      if (bytes > 0 && parsed.info.channels > 0) {
        parsed.info.frames = size / (bytes * parsed.info.channels);
      }
      return parsed;
    } else {
      in.seekg(size + (size & 1), std::ios::cur);
    }
  }
  throw Error(ErrorCode::kInvalidAudio, path + ": missing fmt or data chunk");
}

}  // namespace

WavHeaderInfo ReadWavHeader(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path);
  return ParseWav(in, path).info;
}

Waveform ReadWav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path);
  const ParsedWav parsed = ParseWav(in, path);
  const WavHeaderInfo& info = parsed.info;
  if (info.channels != 1) {
    throw Error(ErrorCode::kInvalidAudio,
                path + ": expected mono, got " + std::to_string(info.channels) +
                    " channels");
  }
  Waveform wav;
  wav.sample_rate = info.sample_rate;
  wav.samples.resize(info.frames);
  in.seekg(parsed.data_pos);
  for (size_t i = 0; i < info.frames; ++i) {
    if (info.format == 1 && info.bits_per_sample == 16) {
      wav.samples[i] = ReadLe<int16_t>(in) / 32768.0;
    } else if (info.format == 1 && info.bits_per_sample == 32) {
      wav.samples[i] = ReadLe<int32_t>(in) / 2147483648.0;
    } else if (info.format == 3 && info.bits_per_sample == 32) {
      wav.samples[i] = ReadLe<float>(in);
    } else {
      throw Error(ErrorCode::kInvalidAudio,
                  path + ": unsupported sample format " +
                      std::to_string(info.format) + "/" +
                      std::to_string(info.bits_per_sample));
    }
  }
  if (!in) throw Error(ErrorCode::kInvalidAudio, path + ": truncated data");
  return wav;
}

void WriteWav(const std::string& path, const Waveform& wav) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path);
  const uint32_t data_bytes = static_cast<uint32_t>(wav.samples.size() * 2);
  out.write("RIFF", 4);
  WriteLe<uint32_t>(out, 36 + data_bytes);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  WriteLe<uint32_t>(out, 16);
  WriteLe<uint16_t>(out, 1);
  WriteLe<uint16_t>(out, 1);
  WriteLe<uint32_t>(out, static_cast<uint32_t>(wav.sample_rate));
  WriteLe<uint32_t>(out, static_cast<uint32_t>(wav.sample_rate * 2));
  WriteLe<uint16_t>(out, 2);
  WriteLe<uint16_t>(out, 16);
  out.write("data", 4);
  WriteLe<uint32_t>(out, data_bytes);
  for (double s : wav.samples) {
    const double c = std::clamp(s, -1.0, 1.0);
    WriteLe<int16_t>(out, static_cast<int16_t>(std::lround(c * 32767.0)));
  }
  if (!out) throw Error(ErrorCode::kIoError, "short write to " + path);
}

Stft::Stft(int n_fft, int win_length, int hop_length)
    : n_fft_(n_fft), win_length_(win_length), hop_(hop_length) {
  if (win_length > n_fft || hop_length <= 0 || win_length <= 0) {
    throw Error(ErrorCode::kBadConfig, "invalid STFT geometry");
  }
  window_.resize(win_length);
  for (int i = 0; i < win_length; ++i) {
    window_[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / win_length);
  }
  std::lock_guard<std::mutex> lock(PlannerMutex());
  time_buf_ = fftw_alloc_real(n_fft);
  auto* freq = fftw_alloc_complex(n_fft / 2 + 1);
  freq_buf_ = freq;
  forward_plan_ = fftw_plan_dft_r2c_1d(n_fft, time_buf_, freq, FFTW_ESTIMATE);
  inverse_plan_ = fftw_plan_dft_c2r_1d(n_fft, freq, time_buf_, FFTW_ESTIMATE);
}

Stft::~Stft() {
  std::lock_guard<std::mutex> lock(PlannerMutex());
  fftw_destroy_plan(static_cast<fftw_plan>(forward_plan_));
  fftw_destroy_plan(static_cast<fftw_plan>(inverse_plan_));
  fftw_free(time_buf_);
  fftw_free(freq_buf_);
}

int Stft::NumFrames(size_t num_samples) const {
  if (num_samples < static_cast<size_t>(win_length_)) return 0;
  return static_cast<int>((num_samples - win_length_) / hop_) + 1;
}

size_t Stft::SignalLength(int frames) const {
  if (frames <= 0) return 0;
  return static_cast<size_t>(frames - 1) * hop_ + win_length_;
}

ComplexFrames Stft::Forward(std::span<const double> signal) {
  const int frames = NumFrames(signal.size());
  ComplexFrames out(frames, std::vector<std::complex<double>>(num_bins()));
  auto* freq = static_cast<fftw_complex*>(freq_buf_);
  for (int t = 0; t < frames; ++t) {
    std::fill(time_buf_, time_buf_ + n_fft_, 0.0);
    const size_t start = static_cast<size_t>(t) * hop_;
    for (int j = 0; j < win_length_; ++j) {
      time_buf_[j] = signal[start + j] * window_[j];
    }
    fftw_execute(static_cast<fftw_plan>(forward_plan_));
    for (int k = 0; k < num_bins(); ++k) out[t][k] = {freq[k][0], freq[k][1]};
  }
  return out;
}

Matrix Stft::Magnitude(std::span<const double> signal) {
  const ComplexFrames spec = Forward(signal);
  Matrix mag(static_cast<Eigen::Index>(spec.size()), num_bins());
  for (size_t t = 0; t < spec.size(); ++t) {
    for (int k = 0; k < num_bins(); ++k) mag(t, k) = std::abs(spec[t][k]);
  }
  return mag;
}

std::vector<double> Stft::Inverse(const ComplexFrames& frames) {
  const int count = static_cast<int>(frames.size());
  const size_t length = SignalLength(count);
  std::vector<double> out(length, 0.0), norm(length, 0.0);
  auto* freq = static_cast<fftw_complex*>(freq_buf_);
  for (int t = 0; t < count; ++t) {
    for (int k = 0; k < num_bins(); ++k) {
      freq[k][0] = frames[t][k].real();
      freq[k][1] = frames[t][k].imag();
    }
    fftw_execute(static_cast<fftw_plan>(inverse_plan_));
    const size_t start = static_cast<size_t>(t) * hop_;
    for (int j = 0; j < win_length_; ++j) {
      out[start + j] += time_buf_[j] / n_fft_ * window_[j];
      norm[start + j] += window_[j] * window_[j];
    }
  }
  // Near the ends the window overlap vanishes; flooring the normaliser keeps
  // inconsistent spectra (as in phase reconstruction) from exploding there.
  const double floor = 0.1 * *std::max_element(norm.begin(), norm.end());
  for (size_t i = 0; i < length; ++i) out[i] /= std::max(norm[i], floor);
  return out;
}

Matrix MelFilterbank(int sample_rate, int n_fft, int n_mels, double f_min,
                     double f_max) {
  auto hz_to_mel = [](double f) { return 2595.0 * std::log10(1.0 + f / 700.0); };
  auto mel_to_hz = [](double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); };
  const int bins = n_fft / 2 + 1;
  const double mel_lo = hz_to_mel(f_min);
  const double mel_hi = hz_to_mel(f_max);
  std::vector<double> edges(n_mels + 2);
  for (int i = 0; i < n_mels + 2; ++i) {
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (n_mels + 1));
  }
  Matrix fb = Matrix::Zero(n_mels, bins);
  for (int m = 0; m < n_mels; ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    for (int k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / n_fft;
      if (f > lo && f < hi) {
        fb(m, k) = f <= mid ? (f - lo) / (mid - lo) : (hi - f) / (hi - mid);
      }
    }
  }
  return fb;
}

double EstimatePitch(std::span<const double> frame, int sample_rate,
                     double f0_min, double f0_max, double threshold) {
  const int n = static_cast<int>(frame.size());
  const int tau_min = std::max(2, static_cast<int>(std::floor(sample_rate / f0_max)));
  const int tau_max = static_cast<int>(std::ceil(sample_rate / f0_min));
  const int width = n - tau_max - 1;
  if (width <= tau_max / 2) return 0.0;
  double power = 0.0;
  for (int j = 0; j < width; ++j) power += frame[j] * frame[j];
  if (power < 1e-10 * width) return 0.0;

  // d(tau) for tau in [0, tau_max + 1]
  std::vector<double> diff(tau_max + 2, 0.0);
  for (int tau = 1; tau <= tau_max + 1; ++tau) {
    double acc = 0.0;
    for (int j = 0; j < width; ++j) {
      const double d = frame[j] - frame[j + tau];
      acc += d * d;
    }
    diff[tau] = acc;
  }
  // cumulative mean normalized difference
  std::vector<double> cmnd(tau_max + 2, 1.0);
  double running = 0.0;
  for (int tau = 1; tau <= tau_max + 1; ++tau) {
    running += diff[tau];
    cmnd[tau] = running > 0.0 ? diff[tau] * tau / running : 1.0;
  }
  int best = -1;
  for (int tau = tau_min; tau <= tau_max; ++tau) {
    if (cmnd[tau] < threshold) {
      while (tau + 1 <= tau_max && cmnd[tau + 1] < cmnd[tau]) ++tau;
      best = tau;
      break;
    }
  }
  if (best < 0) return 0.0;
  double refined = best;
  const double a = cmnd[best - 1], b = cmnd[best], c = cmnd[best + 1];
  const double denom = a - 2.0 * b + c;
  if (std::abs(denom) > 1e-12) {
    refined += std::clamp(0.5 * (a - c) / denom, -1.0, 1.0);
  }
  const double f0 = sample_rate / refined;
  if (f0 < f0_min || f0 > f0_max) return 0.0;
  return f0;
}

std::vector<double> GriffinLim(const Matrix& magnitude, Stft& stft,
                               const GriffinLimOptions& opts) {
  const Eigen::Index frames = magnitude.rows();
  const Eigen::Index bins = magnitude.cols();
  if (bins != stft.num_bins()) {
    throw Error(ErrorCode::kShapeMismatch, "GriffinLim: bin count");
  }
  Rng rng(opts.seed);
  ComplexFrames angles(frames, std::vector<std::complex<double>>(bins));
  for (auto& row : angles) {
    for (auto& a : row) a = std::polar(1.0, 2.0 * std::numbers::pi * rng.Uniform());
  }
  ComplexFrames spec(frames, std::vector<std::complex<double>>(bins));
  ComplexFrames previous(frames, std::vector<std::complex<double>>(bins));
  const double mix = opts.momentum / (1.0 + opts.momentum);
  auto apply = [&]() {
    for (Eigen::Index t = 0; t < frames; ++t) {
      for (Eigen::Index k = 0; k < bins; ++k) spec[t][k] = magnitude(t, k) * angles[t][k];
    }
  };
  for (int it = 0; it < opts.iterations; ++it) {
    apply();
    const std::vector<double> signal = stft.Inverse(spec);
    ComplexFrames rebuilt = stft.Forward(signal);
    for (Eigen::Index t = 0; t < frames; ++t) {
      for (Eigen::Index k = 0; k < bins; ++k) {
        std::complex<double> a = rebuilt[t][k] - mix * previous[t][k];
        const double mag = std::abs(a);
        angles[t][k] = mag > 1e-16 ? a / mag : std::complex<double>(1.0, 0.0);
      }
    }
    previous = std::move(rebuilt);
  }
  apply();
  return stft.Inverse(spec);
}

}  // namespace duopath
