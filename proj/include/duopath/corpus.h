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

// Corpus manifest, context windows, duration reconciliation and the
// prepare-data pipeline.

#ifndef DUOPATH_CORPUS_H_
#define DUOPATH_CORPUS_H_

#include <map>
#include <string>
#include <vector>

#include "duopath/config.h"
#include "duopath/features.h"

namespace duopath {

// Context slot (id or text) that falls off a document boundary.
inline const std::string kNullContext;

struct UtteranceRecord {
  std::string id;
  std::string text;
  std::vector<std::string> phonemes;
  std::vector<int> durations;
  // 2k+1 ids: k past, self, k future.
  std::vector<std::string> context_ids;
  std::string speaker_id;
  std::string audio_path;
  std::string split = "train";
  std::string label;

  int frames() const;
  // Throws BadManifest when the record's own invariants do not hold.
  void Validate() const;
};

class Manifest {
 public:
  Manifest() = default;
  explicit Manifest(std::vector<UtteranceRecord> records,
                    std::string base_dir = ".");

  const std::vector<UtteranceRecord>& records() const { return records_; }
  const std::string& base_dir() const { return base_dir_; }
  // Sorted, de-duplicated.
  const std::vector<std::string>& speakers() const { return speakers_; }
  const std::vector<std::string>& phoneme_inventory() const { return phonemes_; }

  const UtteranceRecord& Find(const std::string& id) const;
  bool Contains(const std::string& id) const { return index_.count(id) > 0; }
  int PhonemeIndex(const std::string& symbol) const;
  int SpeakerIndex(const std::string& speaker) const;
  std::vector<int> PhonemeIds(const std::vector<std::string>& phonemes) const;

  // Records whose split matches; an empty split selects all.
  std::vector<const UtteranceRecord*> Split(const std::string& split) const;

  std::string FeaturePath(const std::string& id) const;
  std::string StatsPath() const;

 private:
  std::vector<UtteranceRecord> records_;
  std::string base_dir_ = ".";
  std::map<std::string, size_t> index_;
  std::vector<std::string> speakers_;
  std::vector<std::string> phonemes_;
};

// One JSON object per line: id, text, phonemes, durations, context_ids,
// speaker_id, audio_path (plus optional split and label).
Manifest ReadManifest(const std::string& path);
void WriteManifest(const std::string& path, const Manifest& manifest);

ProsodyStats ReadStats(const std::string& path);
void WriteStats(const std::string& path, const ProsodyStats& stats);

// Texts of the 2k+1 window around `id` in document order; slots past a
// document boundary are kNullContext. Neighbours are found by following the
// stored context_ids, so any k works as long as the stored window has k >= 1.
std::vector<std::string> BuildContextWindow(const Manifest& manifest,
                                            const std::string& id, int k);

// Forces sum(durations) == frames by adjusting the last nonzero entry.
// Differences larger than `tolerance` raise AlignmentMismatch.
std::vector<int> AlignDurations(const std::vector<int>& durations, int frames,
                                int tolerance = 3);

// Splits `frames` evenly over `count` phonemes; the remainder goes to the
// leading phonemes.
std::vector<int> UniformDurations(int count, int frames);

// Context ids for utterances of one document listed in order.
std::vector<std::vector<std::string>> BuildContextIds(
    const std::vector<std::string>& document_ids, int k);

class Phonemizer {
 public:
  virtual ~Phonemizer() = default;
  // Throws PhonemizeError when the text cannot be covered.
  virtual std::vector<std::string> Phonemize(const std::string& text) const = 0;
};

// Maps each letter to the phoneme of the same (lower-case) name. Whitespace
// and ASCII punctuation are skipped; anything else must be in the inventory.
class CharacterPhonemizer : public Phonemizer {
 public:
  explicit CharacterPhonemizer(std::vector<std::string> inventory);
  std::vector<std::string> Phonemize(const std::string& text) const override;

 private:
  std::vector<std::string> inventory_;
};

struct PrepareSummary {
  int utterances = 0;
  int total_frames = 0;
  int adjusted_durations = 0;
  int uniform_durations = 0;
  std::string manifest_path;
};

// Reads `corpus_dir/corpus.jsonl`, extracts features for every utterance into
// `out_dir/features/<id>.stb`, and writes `out_dir/manifest.jsonl` and
// `out_dir/stats.json`.
//
// corpus.jsonl keys: id, text, speaker_id, audio (path relative to the corpus
// directory), optional phonemes (list or space-separated string; default:
// character phonemization of text), optional durations (list) or alignment
// (file of integers), optional document, split and label.
PrepareSummary PrepareData(const std::string& corpus_dir,
                           const std::string& out_dir, const Config& cfg);

}  // namespace duopath

#endif  // DUOPATH_CORPUS_H_
