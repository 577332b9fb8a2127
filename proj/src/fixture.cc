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

#include "duopath/fixture.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "duopath/audio.h"
#include "json.hpp"

namespace duopath {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kSampleRate = 16000;
constexpr int kHop = 240;
constexpr int kWin = 1200;

const std::vector<std::string> kCalmWords = {"sad", "gloomy", "sorrow", "weary",
                                             "afraid", "scared", "timid", "uneasy"};
const std::vector<std::string> kExcitedWords = {"happy", "glad", "joyful", "bright",
                                                "angry", "furious", "bold", "wild"};
const std::vector<std::string> kNouns = {"king", "boat", "moon", "road", "bird",
                                         "door", "field", "river", "lamp", "town"};
const std::vector<std::string> kVerbs = {"saw", "found", "left", "met", "kept",
                                         "heard", "drew", "made"};

bool Unvoiced(char c) {
  return c == 's' || c == 'f' || c == 'h' || c == 't' || c == 'k' || c == 'p';
}

std::string Pick(const std::vector<std::string>& v, Rng& rng) {
  return v[rng.Index(v.size())];
}

std::string MakeSentence(bool excited, Rng& rng) {
  const auto& mood = excited ? kExcitedWords : kCalmWords;
  return "the " + Pick(mood, rng) + " " + Pick(kNouns, rng) + " " +
         Pick(kVerbs, rng) + " a " + Pick(kNouns, rng);
}

std::vector<std::string> Letters(const std::string& text) {
  std::vector<std::string> out;
  for (char c : text) {
    if (c >= 'a' && c <= 'z') out.emplace_back(1, c);
  }
  return out;
}

// Harmonic (or noise) rendering of a phoneme sequence with known frame
// durations. The f0 contour and loudness depend on the prosody regime; the
// speaker only moves the harmonic envelope, so pitch stays predictable from
// text and context alone.
Waveform Render(const std::vector<std::string>& phonemes,
                const std::vector<int>& durations, bool excited, int speaker,
                Rng& rng) {
  int frames = 0;
  for (int d : durations) frames += d;
  const size_t length = static_cast<size_t>(frames - 1) * kHop + kWin;
  std::vector<int> frame_phone(frames);
  for (int i = 0, t = 0; i < static_cast<int>(durations.size()); ++i) {
    for (int k = 0; k < durations[i]; ++k) frame_phone[t++] = i;
  }
  const double base = excited ? 210.0 : 115.0;
  const double tilt = speaker ? 0.75 : 0.0;
  const double amp = excited ? 0.55 : 0.18;
  const double wobble = excited ? 0.10 : 0.03;
  const double rate = excited ? 1.2 : 0.7;
  Waveform w;
  w.sample_rate = kSampleRate;
  w.samples.assign(length, 0.0);
  double phase = 0.0;
  for (size_t n = 0; n < length; ++n) {
    const double center = (static_cast<double>(n) - kWin / 2.0) / kHop;
    const int t = std::clamp(static_cast<int>(std::lround(center)), 0, frames - 1);
    const char c = phonemes[frame_phone[t]][0];
    const double sec = static_cast<double>(n) / kSampleRate;
    const double f0 = base * (1.0 + wobble * std::sin(2 * std::numbers::pi * rate * sec));
    phase += 2 * std::numbers::pi * f0 / kSampleRate;
    double v = 0.0;
    if (Unvoiced(c)) {
      v = 0.08 * rng.Normal();
    } else {
      const double peak = 1.0 + (c - 'a') % 6 + tilt;
      double norm = 0.0;
      for (int h = 1; h <= 8; ++h) {
        const double a = std::exp(-0.5 * (h - peak) * (h - peak));
        v += a * std::sin(h * phase);
        norm += a;
      }
      v /= norm;
    }
    w.samples[n] = amp * v + 0.002 * rng.Normal();
  }
  return w;
}

}  // namespace

std::string FixtureRegime(int document) { return document % 2 ? "excited" : "calm"; }

FixtureSummary MakeFixture(const std::string& out_dir, const FixtureOptions& opts) {
  const fs::path root(out_dir);
  fs::create_directories(root / "corpus" / "wav");
  fs::create_directories(root / "text");
  Rng rng(opts.seed);
  FixtureSummary s;
  s.corpus_dir = (root / "corpus").string();
  s.text_path = (root / "text" / "corpus.txt").string();
  s.lexicon_path = (root / "text" / "lexicon.json").string();
  s.labels_path = (root / "labels.tsv").string();
  s.paragraph_path = (root / "paragraph.txt").string();

  std::ofstream corpus(root / "corpus" / "corpus.jsonl");
  std::ofstream labels(s.labels_path);
  const int docs = opts.documents;
  for (int d = 0; d < docs; ++d) {
    const bool excited = d % 2 == 1;
    const int speaker = (d / 2) % 2;
    // 80/10/10 split by document.
    std::string split = "train";
    if (docs >= 3 && d == docs - 2) split = "val";
    if (docs >= 3 && d == docs - 1) split = "test";
    for (int k = 0; k < opts.sentences_per_document; ++k) {
      char id[32];
      std::snprintf(id, sizeof(id), "d%02d_s%02d", d, k);
      const std::string text = MakeSentence(excited, rng);
      const auto phonemes = Letters(text);
      std::vector<int> durations;
      for (size_t i = 0; i < phonemes.size(); ++i) {
        durations.push_back(excited ? 2 + static_cast<int>(rng.Index(2))
                                    : 3 + static_cast<int>(rng.Index(3)));
      }
      const Waveform wav = Render(phonemes, durations, excited, speaker, rng);
      const std::string rel = std::string("wav/") + id + ".wav";
      WriteWav((root / "corpus" / rel).string(), wav);
      json j = {{"id", id},
                {"text", text},
                {"speaker_id", speaker ? "spk_b" : "spk_a"},
                {"audio", rel},
                {"phonemes", phonemes},
                {"durations", durations},
                {"document", "doc" + std::to_string(d)},
                {"split", split},
                {"label", FixtureRegime(d)}};
      corpus << j.dump() << '\n';
      labels << id << '\t' << FixtureRegime(d) << '\n';
      ++s.utterances;
      for (int v : durations) s.frames += v;
    }
  }

  std::ofstream text(s.text_path);
  for (int i = 0; i < opts.text_sentences; ++i) text << MakeSentence(i % 2 == 1, rng) << '\n';

  json lex;
  lex["groups"]["sad"] = {"sad", "gloomy", "sorrow", "weary"};
  lex["groups"]["scared"] = {"afraid", "scared", "timid", "uneasy"};
  lex["groups"]["happy"] = {"happy", "glad", "joyful", "bright"};
  lex["groups"]["angry"] = {"angry", "furious", "bold", "wild"};
  std::ofstream(s.lexicon_path) << lex.dump(2) << '\n';

  std::ofstream para(s.paragraph_path);
  for (int i = 0; i < 5; ++i) para << MakeSentence(i >= 2, rng) << '\n';
  return s;
}

}  // namespace duopath
