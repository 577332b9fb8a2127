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

#include "duopath/corpus.h"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"

namespace duopath {

namespace fs = std::filesystem;
using nlohmann::json;

int UtteranceRecord::frames() const {
  return std::accumulate(durations.begin(), durations.end(), 0);
}

void UtteranceRecord::Validate() const {
  if (id.empty()) throw Error(ErrorCode::kBadManifest, "record with empty id");
  if (durations.size() != phonemes.size()) {
    throw Error(ErrorCode::kBadManifest,
                id + ": " + std::to_string(durations.size()) + " durations for " +
                    std::to_string(phonemes.size()) + " phonemes");
  }
  for (int d : durations) {
    if (d < 0) throw Error(ErrorCode::kBadManifest, id + ": negative duration");
  }
  if (context_ids.size() % 2 != 1) {
    throw Error(ErrorCode::kBadManifest, id + ": context window must be odd");
  }
  if (context_ids[context_ids.size() / 2] != id) {
    throw Error(ErrorCode::kBadManifest, id + ": context center is not self");
  }
}

Manifest::Manifest(std::vector<UtteranceRecord> records, std::string base_dir)
    : records_(std::move(records)), base_dir_(std::move(base_dir)) {
  std::set<std::string> speakers, phonemes;
  for (size_t i = 0; i < records_.size(); ++i) {
    const UtteranceRecord& r = records_[i];
    r.Validate();
    if (!index_.emplace(r.id, i).second) {
      throw Error(ErrorCode::kBadManifest, "duplicate id " + r.id);
    }
    speakers.insert(r.speaker_id);
    phonemes.insert(r.phonemes.begin(), r.phonemes.end());
  }
  for (const UtteranceRecord& r : records_) {
    for (const std::string& c : r.context_ids) {
      if (c != kNullContext && !index_.count(c)) {
        throw Error(ErrorCode::kBadManifest,
                    r.id + ": unresolved context id " + c);
      }
    }
  }
  speakers_.assign(speakers.begin(), speakers.end());
  phonemes_.assign(phonemes.begin(), phonemes.end());
}

const UtteranceRecord& Manifest::Find(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw Error(ErrorCode::kUnknownUtterance, id);
  return records_[it->second];
}

int Manifest::PhonemeIndex(const std::string& symbol) const {
  auto it = std::lower_bound(phonemes_.begin(), phonemes_.end(), symbol);
  if (it == phonemes_.end() || *it != symbol) {
    throw Error(ErrorCode::kUnknownPhoneme, symbol);
  }
  return static_cast<int>(it - phonemes_.begin());
}

int Manifest::SpeakerIndex(const std::string& speaker) const {
  auto it = std::lower_bound(speakers_.begin(), speakers_.end(), speaker);
  if (it == speakers_.end() || *it != speaker) {
    throw Error(ErrorCode::kBadManifest, "unknown speaker " + speaker);
  }
  return static_cast<int>(it - speakers_.begin());
}

std::vector<int> Manifest::PhonemeIds(const std::vector<std::string>& phonemes) const {
  std::vector<int> ids;
  ids.reserve(phonemes.size());
  for (const std::string& p : phonemes) ids.push_back(PhonemeIndex(p));
  return ids;
}

std::vector<const UtteranceRecord*> Manifest::Split(const std::string& split) const {
  std::vector<const UtteranceRecord*> out;
  for (const UtteranceRecord& r : records_) {
    if (split.empty() || r.split == split) out.push_back(&r);
  }
  return out;
}

std::string Manifest::FeaturePath(const std::string& id) const {
  return (fs::path(base_dir_) / "features" / (id + ".stb")).string();
}

std::string Manifest::StatsPath() const {
  return (fs::path(base_dir_) / "stats.json").string();
}

namespace {

UtteranceRecord RecordFromJson(const json& j) {
  UtteranceRecord r;
  r.id = j.at("id").get<std::string>();
  r.text = j.at("text").get<std::string>();
  r.phonemes = j.at("phonemes").get<std::vector<std::string>>();
  r.durations = j.at("durations").get<std::vector<int>>();
  r.context_ids = j.at("context_ids").get<std::vector<std::string>>();
  r.speaker_id = j.at("speaker_id").get<std::string>();
  r.audio_path = j.at("audio_path").get<std::string>();
  r.split = j.value("split", std::string("train"));
  r.label = j.value("label", std::string());
  return r;
}

json RecordToJson(const UtteranceRecord& r) {
  json j;
  j["id"] = r.id;
  j["text"] = r.text;
  j["phonemes"] = r.phonemes;
  j["durations"] = r.durations;
  j["context_ids"] = r.context_ids;
  j["speaker_id"] = r.speaker_id;
  j["audio_path"] = r.audio_path;
  j["split"] = r.split;
  if (!r.label.empty()) j["label"] = r.label;
  return j;
}

}  // namespace

Manifest ReadManifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open manifest " + path);
  std::vector<UtteranceRecord> records;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      records.push_back(RecordFromJson(json::parse(line)));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kBadManifest,
                  path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  std::string base = fs::path(path).parent_path().string();
  return Manifest(std::move(records), base.empty() ? "." : base);
}

void WriteManifest(const std::string& path, const Manifest& manifest) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path);
  for (const UtteranceRecord& r : manifest.records()) {
    out << RecordToJson(r).dump() << '\n';
  }
}

ProsodyStats ReadStats(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open stats " + path);
  return ProsodyStats::FromJson(json::parse(in));
}

void WriteStats(const std::string& path, const ProsodyStats& stats) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path);
  out << stats.ToJson().dump(2) << '\n';
}

std::vector<std::string> BuildContextWindow(const Manifest& manifest,
                                            const std::string& id, int k) {
  if (k < 0) throw Error(ErrorCode::kBadWindow, "negative k");
  const UtteranceRecord& self = manifest.Find(id);
  std::vector<std::string> window(2 * k + 1, kNullContext);
  window[k] = self.text;
  // Walk neighbour links one step at a time in each direction.
  auto step = [&](const UtteranceRecord& r, int dir) -> const UtteranceRecord* {
    const int center = static_cast<int>(r.context_ids.size() / 2);
    if (center == 0) return nullptr;
    const std::string& next = r.context_ids[center + dir];
    if (next == kNullContext) return nullptr;
    return &manifest.Find(next);
  };
  for (int dir : {-1, 1}) {
    const UtteranceRecord* cur = &self;
    for (int j = 1; j <= k; ++j) {
      cur = step(*cur, dir);
      if (!cur) break;
      window[k + dir * j] = cur->text;
    }
  }
  return window;
}

std::vector<int> AlignDurations(const std::vector<int>& durations, int frames,
                                int tolerance) {
  for (int d : durations) {
    if (d < 0) throw Error(ErrorCode::kAlignmentMismatch, "negative duration");
  }
  const int total = std::accumulate(durations.begin(), durations.end(), 0);
  const int delta = frames - total;
  if (std::abs(delta) > tolerance) {
    throw Error(ErrorCode::kAlignmentMismatch,
                "durations sum to " + std::to_string(total) + " but there are " +
                    std::to_string(frames) + " frames");
  }
  std::vector<int> out = durations;
  if (delta == 0) return out;
  if (out.empty()) {
    throw Error(ErrorCode::kAlignmentMismatch, "no phonemes to absorb frames");
  }
  int last = static_cast<int>(out.size()) - 1;
  while (last > 0 && out[last] == 0) --last;
  if (delta > 0) {
    out[last] += delta;
    return out;
  }
  // Removing frames: take from the last nonzero entry first, spilling into
  // earlier entries if it would go negative.
  int remove = -delta;
  for (int i = last; i >= 0 && remove > 0; --i) {
    const int take = std::min(out[i], remove);
    out[i] -= take;
    remove -= take;
  }
  return out;
}

std::vector<int> UniformDurations(int count, int frames) {
  if (count <= 0) return {};
  std::vector<int> out(count, frames / count);
  for (int i = 0; i < frames % count; ++i) ++out[i];
  return out;
}

std::vector<std::vector<std::string>> BuildContextIds(
    const std::vector<std::string>& document_ids, int k) {
  const int n = static_cast<int>(document_ids.size());
  std::vector<std::vector<std::string>> out(n);
  for (int i = 0; i < n; ++i) {
    out[i].resize(2 * k + 1, kNullContext);
    for (int j = -k; j <= k; ++j) {
      const int pos = i + j;
      if (pos >= 0 && pos < n) out[i][k + j] = document_ids[pos];
    }
  }
  return out;
}

CharacterPhonemizer::CharacterPhonemizer(std::vector<std::string> inventory)
    : inventory_(std::move(inventory)) {
  std::sort(inventory_.begin(), inventory_.end());
}

std::vector<std::string> CharacterPhonemizer::Phonemize(const std::string& text) const {
  std::vector<std::string> out;
  for (unsigned char c : text) {
    if (std::isspace(c) || (c < 128 && std::ispunct(c))) continue;
    std::string sym(1, static_cast<char>(c < 128 ? std::tolower(c) : c));
    if (!std::binary_search(inventory_.begin(), inventory_.end(), sym)) {
      throw Error(ErrorCode::kPhonemizeError,
                  "no phoneme for '" + sym + "' in \"" + text + "\"");
    }
    out.push_back(std::move(sym));
  }
  if (out.empty()) {
    throw Error(ErrorCode::kPhonemizeError, "no phonemes in \"" + text + "\"");
  }
  return out;
}

namespace {

std::vector<std::string> LetterInventory() {
  std::vector<std::string> inv;
  for (char c = 'a'; c <= 'z'; ++c) inv.emplace_back(1, c);
  return inv;
}

std::vector<int> ReadAlignmentFile(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open alignment " + path);
  std::vector<int> out;
  int v;
  while (in >> v) out.push_back(v);
  return out;
}

}  // namespace

PrepareSummary PrepareData(const std::string& corpus_dir,
                           const std::string& out_dir, const Config& cfg) {
  const FeatureConfig fcfg = FeatureConfig::FromConfig(cfg);
  const int k = cfg.GetInt("context_k", 2);
  const int tolerance = cfg.GetInt("duration_tolerance", 3);
  const bool per_speaker = cfg.GetString("prosody_norm", "global") == "speaker";
  const fs::path corpus(corpus_dir);
  const fs::path out(out_dir);
  fs::create_directories(out / "features");

  std::ifstream in(corpus / "corpus.jsonl");
  if (!in) {
    throw Error(ErrorCode::kIoError,
                "cannot open " + (corpus / "corpus.jsonl").string());
  }
  std::vector<json> entries;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    entries.push_back(json::parse(line));
  }
  if (entries.empty()) throw Error(ErrorCode::kEmptyCorpus, corpus_dir);

  const CharacterPhonemizer phonemizer(LetterInventory());
  PrepareSummary summary;
  ProsodyStatsAccumulator stats;
  std::vector<UtteranceRecord> records;
  std::vector<std::string> doc_order;
  std::map<std::string, std::vector<std::string>> documents;
  std::map<std::string, size_t> position;

  for (const json& e : entries) {
    UtteranceRecord r;
    r.id = e.at("id").get<std::string>();
    r.text = e.at("text").get<std::string>();
    r.speaker_id = e.at("speaker_id").get<std::string>();
    r.split = e.value("split", std::string("train"));
    r.label = e.value("label", std::string());
    if (e.contains("phonemes")) {
      if (e["phonemes"].is_string()) {
        std::istringstream ss(e["phonemes"].get<std::string>());
        std::string p;
        while (ss >> p) r.phonemes.push_back(p);
      } else {
        r.phonemes = e["phonemes"].get<std::vector<std::string>>();
      }
    } else {
      r.phonemes = phonemizer.Phonemize(r.text);
    }
    const fs::path audio = corpus / e.at("audio").get<std::string>();
    r.audio_path = fs::absolute(audio).lexically_normal().string();
    const Waveform wav = ReadWav(audio.string());
    const AcousticFeatures feats = ExtractFeatures(wav, fcfg);
    const int frames = static_cast<int>(feats.frames());

    std::vector<int> raw;
    bool have_alignment = false;
    if (e.contains("durations")) {
      raw = e["durations"].get<std::vector<int>>();
      have_alignment = true;
    } else if (e.contains("alignment")) {
      raw = ReadAlignmentFile((corpus / e["alignment"].get<std::string>()).string());
      have_alignment = true;
    }
    if (have_alignment) {
      if (raw.size() != r.phonemes.size()) {
        throw Error(ErrorCode::kAlignmentMismatch,
                    r.id + ": alignment has " + std::to_string(raw.size()) +
                        " entries for " + std::to_string(r.phonemes.size()) +
                        " phonemes");
      }
      r.durations = AlignDurations(raw, frames, tolerance);
      if (r.durations != raw) ++summary.adjusted_durations;
    } else {
      r.durations = UniformDurations(static_cast<int>(r.phonemes.size()), frames);
      ++summary.uniform_durations;
    }

    WriteFeatureCache((out / "features" / (r.id + ".stb")).string(), feats,
                      fcfg.low_band);
    stats.Add(r.speaker_id, feats);
    summary.total_frames += frames;

    const std::string doc = e.value("document", std::string("default"));
    if (!documents.count(doc)) doc_order.push_back(doc);
    documents[doc].push_back(r.id);
    position[r.id] = records.size();
    records.push_back(std::move(r));
  }

  for (const std::string& doc : doc_order) {
    const auto& ids = documents[doc];
    const auto windows = BuildContextIds(ids, k);
    for (size_t i = 0; i < ids.size(); ++i) {
      records[position[ids[i]]].context_ids = windows[i];
    }
  }

  Manifest manifest(std::move(records), out.string());
  summary.utterances = static_cast<int>(manifest.records().size());
  summary.manifest_path = (out / "manifest.jsonl").string();
  WriteManifest(summary.manifest_path, manifest);
  WriteStats((out / "stats.json").string(), stats.Finish(per_speaker));
  return summary;
}

}  // namespace duopath
