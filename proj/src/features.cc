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

#include "duopath/features.h"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace duopath {

static_assert(std::endian::native == std::endian::little,
              "feature cache I/O assumes a little-endian host");

FeatureConfig FeatureConfig::FromConfig(const Config& cfg) {
  FeatureConfig f;
  f.sample_rate = cfg.GetInt("sample_rate", f.sample_rate);
  f.n_mels = cfg.GetInt("n_mels", f.n_mels);
  f.win_length = cfg.GetInt("win_length", f.win_length);
  f.hop_length = cfg.GetInt("hop_length", f.hop_length);
  f.n_fft = cfg.GetInt("n_fft", f.win_length);
  f.f_min = cfg.GetDouble("f_min", f.f_min);
  f.f_max = cfg.GetDouble("f_max", f.f_max);
  f.f0_min = cfg.GetDouble("f0_min", f.f0_min);
  f.f0_max = cfg.GetDouble("f0_max", f.f0_max);
  f.yin_threshold = cfg.GetDouble("yin_threshold", f.yin_threshold);
  f.log_floor = cfg.GetDouble("log_floor", f.log_floor);
  f.low_band = cfg.GetInt("low_band", f.low_band);
  if (f.low_band > f.n_mels || f.low_band <= 0) {
    throw Error(ErrorCode::kBadConfig, "low_band must be in [1, n_mels]");
  }
  return f;
}

Matrix LowBand(const Matrix& mel, int bins) { return mel.leftCols(bins); }

AcousticFeatures ExtractFeatures(const Waveform& audio, const FeatureConfig& cfg) {
  if (audio.sample_rate != cfg.sample_rate) {
    throw Error(ErrorCode::kSampleRateMismatch,
                "expected " + std::to_string(cfg.sample_rate) + " Hz, got " +
                    std::to_string(audio.sample_rate));
  }
  if (audio.samples.size() < static_cast<size_t>(cfg.win_length)) {
    throw Error(ErrorCode::kEmptyAudio,
                std::to_string(audio.samples.size()) +
                    " samples is shorter than one window");
  }
  Stft stft(cfg.n_fft, cfg.win_length, cfg.hop_length);
  const Matrix mag = stft.Magnitude(audio.samples);
  const Matrix fb = MelFilterbank(cfg.sample_rate, cfg.n_fft, cfg.n_mels,
                                  cfg.f_min, cfg.f_max);
  AcousticFeatures feats;
  feats.mel = (mag * fb.transpose()).cwiseMax(cfg.log_floor).array().log().matrix();
  feats.energy = mag.rowwise().norm();
  const Eigen::Index frames = mag.rows();
  feats.f0 = Vector::Zero(frames);
  for (Eigen::Index t = 0; t < frames; ++t) {
    std::span<const double> frame(audio.samples.data() + t * cfg.hop_length,
                                  cfg.win_length);
    feats.f0[t] = EstimatePitch(frame, cfg.sample_rate, cfg.f0_min, cfg.f0_max,
                                cfg.yin_threshold);
  }
  feats.mel20 = LowBand(feats.mel, cfg.low_band);
  return feats;
}

void WriteFeatureCache(const std::string& path, const AcousticFeatures& feats,
                       int /*low_band*/) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path);
  const uint32_t version = 1;
  const uint32_t frames = static_cast<uint32_t>(feats.mel.rows());
  const uint32_t mels = static_cast<uint32_t>(feats.mel.cols());
  out.write("STYB", 4);
  out.write(reinterpret_cast<const char*>(&version), 4);
  out.write(reinterpret_cast<const char*>(&frames), 4);
  out.write(reinterpret_cast<const char*>(&mels), 4);
  auto put = [&](double v) {
    const float f = static_cast<float>(v);
    out.write(reinterpret_cast<const char*>(&f), 4);
  };
  for (Eigen::Index i = 0; i < feats.mel.size(); ++i) put(feats.mel.data()[i]);
  for (Eigen::Index i = 0; i < feats.f0.size(); ++i) put(feats.f0[i]);
  for (Eigen::Index i = 0; i < feats.energy.size(); ++i) put(feats.energy[i]);
  if (!out) throw Error(ErrorCode::kIoError, "short write to " + path);
}

AcousticFeatures ReadFeatureCache(const std::string& path, int low_band) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path);
  char magic[4];
  uint32_t version = 0, frames = 0, mels = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&frames), 4);
  in.read(reinterpret_cast<char*>(&mels), 4);
  if (!in || std::memcmp(magic, "STYB", 4) != 0 || version != 1) {
    throw Error(ErrorCode::kIoError, path + ": not a feature cache");
  }
  auto get = [&]() {
    float f = 0.0f;
    in.read(reinterpret_cast<char*>(&f), 4);
    return static_cast<double>(f);
  };
  AcousticFeatures feats;
  feats.mel.resize(frames, mels);
  for (Eigen::Index i = 0; i < feats.mel.size(); ++i) feats.mel.data()[i] = get();
  feats.f0.resize(frames);
  for (uint32_t i = 0; i < frames; ++i) feats.f0[i] = get();
  feats.energy.resize(frames);
  for (uint32_t i = 0; i < frames; ++i) feats.energy[i] = get();
  if (!in) throw Error(ErrorCode::kIoError, path + ": truncated");
  feats.mel20 = LowBand(feats.mel, std::min<int>(low_band, static_cast<int>(mels)));
  return feats;
}

Vector ContinuousF0(const Vector& f0) {
  const Eigen::Index n = f0.size();
  Vector out = f0;
  Eigen::Index prev = -1;
  for (Eigen::Index t = 0; t < n; ++t) {
    if (f0[t] <= 0.0) continue;
    if (prev < 0) {
      for (Eigen::Index s = 0; s < t; ++s) out[s] = f0[t];
    } else if (t - prev > 1) {
      for (Eigen::Index s = prev + 1; s < t; ++s) {
        const double a = double(s - prev) / double(t - prev);
        out[s] = (1.0 - a) * f0[prev] + a * f0[t];
      }
    }
    prev = t;
  }
  if (prev >= 0) {
    for (Eigen::Index s = prev + 1; s < n; ++s) out[s] = f0[prev];
  }
  return out;
}

Vector PhonemeAverage(const Vector& frame_values, const std::vector<int>& durations) {
  Vector out = Vector::Zero(static_cast<Eigen::Index>(durations.size()));
  Eigen::Index pos = 0;
  int last_filled = -1;
  std::vector<int> pending;
  for (size_t i = 0; i < durations.size(); ++i) {
    const int d = durations[i];
    if (d <= 0) {
      if (last_filled >= 0) {
        out[i] = out[last_filled];
      } else {
        pending.push_back(static_cast<int>(i));
      }
      continue;
    }
    if (pos + d > frame_values.size()) {
      throw Error(ErrorCode::kShapeMismatch, "PhonemeAverage: durations exceed frames");
    }
    out[i] = frame_values.segment(pos, d).mean();
    pos += d;
    last_filled = static_cast<int>(i);
    for (int p : pending) out[p] = out[i];
    pending.clear();
  }
  return out;
}

ProsodyStats::Moments ProsodyStats::F0For(const std::string& speaker) const {
  if (per_speaker) {
    auto it = speaker_f0.find(speaker);
    if (it != speaker_f0.end()) return it->second;
  }
  return f0;
}

ProsodyStats::Moments ProsodyStats::EnergyFor(const std::string& speaker) const {
  if (per_speaker) {
    auto it = speaker_energy.find(speaker);
    if (it != speaker_energy.end()) return it->second;
  }
  return energy;
}

namespace {

nlohmann::json MomentsJson(const ProsodyStats::Moments& m) {
  return {{"mean", m.mean}, {"std", m.std}};
}

ProsodyStats::Moments MomentsFrom(const nlohmann::json& j) {
  return {j.at("mean").get<double>(), j.at("std").get<double>()};
}

}  // namespace

nlohmann::json ProsodyStats::ToJson() const {
  nlohmann::json j;
  j["per_speaker"] = per_speaker;
  j["f0"] = MomentsJson(f0);
  j["energy"] = MomentsJson(energy);
  j["speaker_f0"] = nlohmann::json::object();
  j["speaker_energy"] = nlohmann::json::object();
  for (const auto& [s, m] : speaker_f0) j["speaker_f0"][s] = MomentsJson(m);
  for (const auto& [s, m] : speaker_energy) j["speaker_energy"][s] = MomentsJson(m);
  return j;
}

ProsodyStats ProsodyStats::FromJson(const nlohmann::json& j) {
  ProsodyStats s;
  s.per_speaker = j.value("per_speaker", false);
  s.f0 = MomentsFrom(j.at("f0"));
  s.energy = MomentsFrom(j.at("energy"));
  if (j.contains("speaker_f0")) {
    for (const auto& [k, v] : j["speaker_f0"].items()) s.speaker_f0[k] = MomentsFrom(v);
  }
  if (j.contains("speaker_energy")) {
    for (const auto& [k, v] : j["speaker_energy"].items()) {
      s.speaker_energy[k] = MomentsFrom(v);
    }
  }
  return s;
}

ProsodyStats::Moments ProsodyStatsAccumulator::Sums::Get() const {
  ProsodyStats::Moments m;
  if (n < 1) return m;
  m.mean = sum / n;
  const double var = std::max(0.0, sq / n - m.mean * m.mean);
  m.std = std::max(std::sqrt(var), 1e-6);
  return m;
}

void ProsodyStatsAccumulator::Add(const std::string& speaker,
                                  const AcousticFeatures& feats) {
  for (Eigen::Index t = 0; t < feats.f0.size(); ++t) {
    if (feats.f0[t] > 0.0) {
      f0_.Add(feats.f0[t]);
      speaker_f0_[speaker].Add(feats.f0[t]);
    }
    energy_.Add(feats.energy[t]);
    speaker_energy_[speaker].Add(feats.energy[t]);
  }
}

ProsodyStats ProsodyStatsAccumulator::Finish(bool per_speaker) const {
  ProsodyStats stats;
  stats.per_speaker = per_speaker;
  stats.f0 = f0_.Get();
  stats.energy = energy_.Get();
  for (const auto& [s, sums] : speaker_f0_) stats.speaker_f0[s] = sums.Get();
  for (const auto& [s, sums] : speaker_energy_) stats.speaker_energy[s] = sums.Get();
  return stats;
}

NormalizedProsody NormalizeProsody(const AcousticFeatures& feats,
                                   const ProsodyStats& stats,
                                   const std::string& speaker) {
  const auto f0m = stats.F0For(speaker);
  const auto em = stats.EnergyFor(speaker);
  NormalizedProsody out;
  const Vector cont = ContinuousF0(feats.f0);
  const bool any_voiced = (feats.f0.array() > 0.0).any();
  out.f0 = any_voiced ? Vector(((cont.array() - f0m.mean) / f0m.std).matrix())
                      : Vector(Vector::Zero(cont.size()));
  out.energy = ((feats.energy.array() - em.mean) / em.std).matrix();
  return out;
}

}  // namespace duopath
