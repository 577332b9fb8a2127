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

// Three-stage training orchestration: text style pre-training, style
// extractor pre-training against the frozen text model, and acoustic model
// training against both frozen teachers.
//
// Artifacts of a run live in a run directory:
//   run.json        RunManifest
//   loss_log.csv    step,epoch,<loss columns>, one row per optimizer update
//   last.ckpt       model after the most recent save point
//   last.optim      optimizer state and position of that save point
//   best.ckpt       model with the lowest selection loss so far
// Stages i and ii write a single checkpoint file; their run directory is
// "<checkpoint without .ckpt>_run" next to it. Stage iii writes straight into
// its output directory and also copies the text style checkpoint there so the
// directory is self-contained for synthesis.

#ifndef DUOPATH_TRAINING_H_
#define DUOPATH_TRAINING_H_

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "duopath/acoustic_model.h"
#include "duopath/config.h"
#include "json.hpp"

namespace duopath {

enum class Stage { kTextStyle, kStyleExtractor, kTts };

std::string StageName(Stage s);
Stage ParseStage(const std::string& name);

struct StageConfig {
  Stage stage = Stage::kTextStyle;
  int batch_size = 16;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.98;
  double learning_rate = 1e-3;
  int warmup_steps = 400;
  int epochs = 1;
  uint64_t seed = 1;
  double alpha = 1.0;
  std::vector<std::string> freeze;
  Ablation ablation = Ablation::kNone;

  static StageConfig FromConfig(Stage stage, const Config& cfg);
  nlohmann::json ToJson() const;
};

struct StageInputs {
  std::string text_corpus;     // stage i
  std::string lexicon;         // stage i, optional
  std::string manifest;        // stages ii and iii
  std::string text_ckpt;       // stages ii and iii
  std::string extractor_ckpt;  // stage iii
  // Checkpoint file for stages i and ii, run directory for stage iii.
  std::string out;
  bool resume = false;
  // Stops after this many optimizer updates in total, saving a resumable
  // state; <= 0 trains every epoch.
  long max_steps = 0;
  // Called after every update of stage iii, before the freeze check. Tests
  // use it to tamper with a teacher.
  std::function<void(long step, TextStyleModel&, StyleExtractorModel&)> after_step;
};

struct RunManifest {
  std::string stage;
  std::string config_hash;
  std::string run_dir;
  std::string loss_log;
  std::map<std::string, std::string> checkpoints;
  long steps = 0;
  int epochs_completed = 0;
  bool stopped = false;
  // First and latest value of the monitored loss column: recon for the style
  // extractor, total for the other stages.
  double initial_loss = 0.0;
  double final_loss = 0.0;
  double best_value = 0.0;
  std::vector<std::string> frozen_report;
  nlohmann::json details = nlohmann::json::object();

  nlohmann::json ToJson() const;
  static RunManifest FromJson(const nlohmann::json& j);
};

RunManifest ReadRunManifest(const std::string& path);

// Run directory used for a stage output.
std::string RunDirFor(Stage stage, const std::string& out);

// Raises StageOrderViolation when a prerequisite checkpoint is missing.
RunManifest RunStage(Stage stage, const Config& cfg, const StageInputs& inputs);

// Text style checkpoint recorded in the run manifest of an extractor
// checkpoint; empty when the run manifest or the file is gone.
std::string TextCheckpointForExtractor(const std::string& extractor_ckpt);

using ChecksumMap = std::map<std::string, uint64_t>;

// Names of frozen components whose checksum differs (or disappeared).
std::vector<std::string> VerifyFrozen(const ChecksumMap& before, const ChecksumMap& after,
                                      const std::vector<std::string>& frozen);

// Rows of a loss log as (step, values by column name).
struct LossLogRow {
  long step = 0;
  int epoch = 0;
  std::map<std::string, double> values;
};
std::vector<LossLogRow> ReadLossLog(const std::string& path);

}  // namespace duopath

#endif  // DUOPATH_TRAINING_H_
