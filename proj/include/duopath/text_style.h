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

// Utterance-level text style encoder with contrastive and clustering
// pre-training.

#ifndef DUOPATH_TEXT_STYLE_H_
#define DUOPATH_TEXT_STYLE_H_

#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "duopath/checkpoint.h"
#include "duopath/config.h"
#include "duopath/nn.h"

namespace duopath {

// Lower-cases and strips leading/trailing ASCII punctuation.
std::string NormalizeWord(const std::string& word);

// Whitespace tokenizer with per-character fallback for out-of-vocabulary
// words. Id 0 is reserved for unknown characters.
class Tokenizer {
 public:
  Tokenizer() = default;
  static Tokenizer Build(const std::vector<std::string>& corpus, int min_count);
  static Tokenizer FromJson(const nlohmann::json& j);
  nlohmann::json ToJson() const;

  std::vector<int> Encode(const std::string& text) const;
  int size() const { return static_cast<int>(tokens_.size()); }

 private:
  void Insert(const std::string& token);

  std::vector<std::string> tokens_{"<unk>"};
  std::unordered_map<std::string, int> index_;
};

// Word -> same-emotion substitutes. Closed by construction: every word that
// appears as a substitute is also an entry, and entries that share any word
// are merged into one emotion class.
class EmotionLexicon {
 public:
  EmotionLexicon() = default;
  explicit EmotionLexicon(const std::map<std::string, std::vector<std::string>>& entries);
  // Accepts either {"word": ["sub", ...]} or {"groups": {"name": [words]}}.
  static EmotionLexicon FromFile(const std::string& path);
  static EmotionLexicon FromJson(const nlohmann::json& j);

  bool Contains(const std::string& word) const { return subs_.count(word) > 0; }
  const std::vector<std::string>& Substitutes(const std::string& word) const;
  size_t size() const { return subs_.size(); }
  std::vector<std::string> Words() const;

 private:
  std::map<std::string, std::vector<std::string>> subs_;
};

struct Augmented {
  std::string text;
  bool augmented = false;
};

// Replaces one seeded-random lexicon word occurrence with a seeded-random
// substitute. Punctuation attached to the word is kept.
Augmented AugmentPositive(const EmotionLexicon& lexicon, const std::string& text,
                          uint64_t seed);

struct TextStyleConfig {
  int d_model = 256;
  int layers = 4;
  int heads = 4;
  int filter = 1024;
  int kernel = 3;
  int d_style = 256;
  int clusters = 8;
  int max_positions = 512;
  int min_count = 1;

  static TextStyleConfig FromConfig(const Config& cfg);
  nlohmann::json ToJson() const;
  static TextStyleConfig FromJson(const nlohmann::json& j);
};

class TextStyleModel {
 public:
  TextStyleModel(const TextStyleConfig& cfg, Tokenizer tokenizer, uint64_t seed);

  static TextStyleModel Load(const std::string& path);
  void Save(const std::string& path) const;
  Checkpoint ToCheckpoint() const;

  const TextStyleConfig& config() const { return cfg_; }
  const Tokenizer& tokenizer() const { return tokenizer_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  int d_style() const { return cfg_.d_style; }

  void SetFrozen(bool frozen) { params_.SetFrozen(frozen); }
  bool frozen() const { return params_.frozen(); }

  // 1 x d_style style vector. `pooled` receives the mean backbone output
  // (1 x d_model), or is left undefined for the null embedding.
  ag::Var Forward(Tape& tape, const std::string& text,
                  ag::Var* pooled = nullptr) const;

  RowVector EncodeStyle(const std::string& text) const;
  // (2k+1) x d_style; even-length windows raise BadWindow.
  Matrix EncodeContext(const std::vector<std::string>& window) const;

  // Clustering head.
  Parameter& centroids() { return *centroids_; }
  ag::Var Reconstruct(Tape& tape, const ag::Var& style) const;

 private:
  TextStyleConfig cfg_;
  Tokenizer tokenizer_;
  ParameterSet params_;
  Embedding embed_;
  std::vector<FftBlock> blocks_;
  Linear projection_;
  Linear decoder_;
  Parameter* null_ = nullptr;
  Parameter* centroids_ = nullptr;
  Matrix positions_;
};

// NT-Xent over 2B rows where row i and row i+B are positives.
ag::Var ContrastiveLoss(const ag::Var& anchors, const ag::Var& positives,
                        double temperature);

// Deep embedded clustering: KL(P || Q) with Student-t soft assignments Q and
// the sharpened target P held constant. Returns the KL value (batch mean).
ag::Var ClusteringLoss(const ag::Var& z, const ag::Var& centroids);

struct TextStyleTrainConfig {
  int batch_size = 16;
  int epochs_contrastive = 2;
  int epochs_cluster = 1;
  double learning_rate = 1e-3;
  int warmup_steps = 400;
  double grad_clip = 1.0;
  double temperature = 0.1;
  double cluster_weight = 1.0;
  double recon_weight = 1.0;
  uint64_t seed = 1;

  static TextStyleTrainConfig FromConfig(const Config& cfg);
};

struct TextStyleEpoch {
  int phase = 1;
  int epoch = 0;
  long step = 0;
  double contrastive = 0.0;
  double cluster = 0.0;
  double recon = 0.0;
  double total = 0.0;
};

struct TextStylePretrainResult {
  std::vector<TextStyleEpoch> epochs;
  // Contrastive loss of the untrained model over the first-epoch batches.
  double initial_contrastive = 0.0;
  // True when TrainControl::max_steps ended the run early.
  bool stopped = false;
};

// Phase 1 trains with the contrastive objective only; phase 2 adds the
// clustering and reconstruction terms after k-means initialization of the
// centroids. `on_epoch` is called after every epoch.
TextStylePretrainResult PretrainStyleEncoder(
    TextStyleModel& model, const std::vector<std::string>& corpus,
    const EmotionLexicon& lexicon, const TextStyleTrainConfig& cfg,
    const std::function<void(const TextStyleEpoch&)>& on_epoch = nullptr,
    const TrainControl& control = TrainControl());

// Plain k-means with seeded farthest-point initialization.
Matrix KMeans(const Matrix& points, int k, int iterations, uint64_t seed);

std::vector<std::string> ReadLines(const std::string& path);

}  // namespace duopath

#endif  // DUOPATH_TEXT_STYLE_H_
