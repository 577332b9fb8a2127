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

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "duopath/training.h"
#include "fixture_util.h"

namespace duopath {
namespace {

namespace fs = std::filesystem;
using testing::PreparedFixture;
using testing::TempDir;

Config ShortConfig() {
  Config cfg = testing::FixtureConfig();
  cfg.Set("extractor.epochs", "3");
  cfg.Set("tts.epochs", "5");
  return cfg;
}

// Stage i and ii checkpoints trained once per test process.
struct Teachers {
  TempDir dir{"teachers"};
  std::string text_ckpt, extractor_ckpt, manifest;

  static const Teachers& Get() {
    static std::unique_ptr<Teachers> t = [] {
      auto p = std::make_unique<Teachers>();
      const auto& fx = PreparedFixture::Get();
      const Config cfg = ShortConfig();
      p->manifest = fx.data_dir + "/manifest.jsonl";
      StageInputs in;
      in.text_corpus = fx.summary.text_path;
      in.lexicon = fx.summary.lexicon_path;
      in.out = p->dir / "text_style.ckpt";
      RunStage(Stage::kTextStyle, cfg, in);
      p->text_ckpt = in.out;
      StageInputs ex;
      ex.manifest = p->manifest;
      ex.text_ckpt = p->text_ckpt;
      ex.out = p->dir / "extractor.ckpt";
      RunStage(Stage::kStyleExtractor, cfg, ex);
      p->extractor_ckpt = ex.out;
      return p;
    }();
    return *t;
  }
};

StageInputs TtsInputs(const std::string& out) {
  const Teachers& t = Teachers::Get();
  StageInputs in;
  in.manifest = t.manifest;
  in.text_ckpt = t.text_ckpt;
  in.extractor_ckpt = t.extractor_ckpt;
  in.out = out;
  return in;
}

ErrorCode CodeOf(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorCode::kIoError;
}

TEST(TrainingTest, StageOrder) {
  TempDir dir("order");
  const Config cfg = ShortConfig();
  const auto& fx = PreparedFixture::Get();
  StageInputs ex;
  ex.manifest = fx.data_dir + "/manifest.jsonl";
  ex.text_ckpt = dir / "missing_text.ckpt";
  ex.out = dir / "extractor.ckpt";
  EXPECT_EQ(CodeOf([&] { RunStage(Stage::kStyleExtractor, cfg, ex); }),
            ErrorCode::kStageOrderViolation);
  StageInputs tts = TtsInputs(dir / "tts");
  tts.extractor_ckpt = dir / "missing_extractor.ckpt";
  EXPECT_EQ(CodeOf([&] { RunStage(Stage::kTts, cfg, tts); }),
            ErrorCode::kStageOrderViolation);
  tts.extractor_ckpt.clear();
  EXPECT_EQ(CodeOf([&] { RunStage(Stage::kTts, cfg, tts); }),
            ErrorCode::kStageOrderViolation);
}

TEST(TrainingTest, TeacherRunsWriteArtifacts) {
  const Teachers& t = Teachers::Get();
  EXPECT_TRUE(fs::exists(t.text_ckpt));
  EXPECT_TRUE(fs::exists(t.extractor_ckpt));
  for (Stage s : {Stage::kTextStyle, Stage::kStyleExtractor}) {
    const std::string out = s == Stage::kTextStyle ? t.text_ckpt : t.extractor_ckpt;
    const RunManifest m = ReadRunManifest(RunDirFor(s, out) + "/run.json");
    EXPECT_EQ(m.stage, StageName(s));
    EXPECT_FALSE(m.stopped);
    EXPECT_EQ(m.checkpoints.at("output"), out);
    EXPECT_EQ(m.config_hash, ShortConfig().Hash());
    const auto rows = ReadLossLog(m.loss_log);
    ASSERT_EQ(static_cast<long>(rows.size()), m.steps);
    for (size_t i = 0; i < rows.size(); ++i) {
      EXPECT_EQ(rows[i].step, static_cast<long>(i) + 1);
      for (const auto& [k, v] : rows[i].values) EXPECT_TRUE(std::isfinite(v)) << k;
    }
  }
  EXPECT_NO_THROW(TextStyleModel::Load(t.text_ckpt));
  EXPECT_NO_THROW(StyleExtractorModel::Load(t.extractor_ckpt));
}

TEST(TrainingTest, TtsRunIsDeterministicAndKeepsTeachersFrozen) {
  TempDir dir("tts_det");
  const Config cfg = ShortConfig();
  const RunManifest a = RunStage(Stage::kTts, cfg, TtsInputs(dir / "a"));
  const RunManifest b = RunStage(Stage::kTts, cfg, TtsInputs(dir / "b"));
  EXPECT_TRUE(a.frozen_report.empty());
  EXPECT_EQ(a.steps, 15);
  EXPECT_EQ(a.epochs_completed, 5);
  EXPECT_EQ(a.final_loss, b.final_loss);
  const auto ra = ReadLossLog(a.loss_log);
  const auto rb = ReadLossLog(b.loss_log);
  ASSERT_EQ(ra.size(), rb.size());
  for (size_t i = 0; i < ra.size(); ++i) EXPECT_EQ(ra[i].values, rb[i].values);
  for (const char* f : {"run.json", "last.ckpt", "best.ckpt", "last.optim", "text_style.ckpt",
                        "loss_log.csv"}) {
    EXPECT_TRUE(fs::exists(fs::path(dir / "a") / f)) << f;
  }
  EXPECT_TRUE(ReadRunManifest(dir / "a/run.json").details.at("parameter_groups")
                  .contains("style_decoder"));
}

TEST(TrainingTest, ResumeContinuesAtNextStep) {
  TempDir dir("tts_resume");
  const Config cfg = ShortConfig();
  StageInputs in = TtsInputs(dir / "run");
  in.max_steps = 10;
  const RunManifest first = RunStage(Stage::kTts, cfg, in);
  EXPECT_TRUE(first.stopped);
  EXPECT_EQ(first.steps, 10);
  EXPECT_EQ(ReadLossLog(first.loss_log).size(), 10u);

  // A crash after the save point leaves extra rows that resuming discards.
  std::ofstream(first.loss_log, std::ios::app) << "11,3,9,9,9,9,9,9,9\n";
  in.max_steps = 0;
  in.resume = true;
  const RunManifest resumed = RunStage(Stage::kTts, cfg, in);
  EXPECT_FALSE(resumed.stopped);
  const auto rows = ReadLossLog(resumed.loss_log);
  ASSERT_EQ(rows.size(), 15u);
  for (size_t i = 0; i < rows.size(); ++i) EXPECT_EQ(rows[i].step, static_cast<long>(i) + 1);

  const RunManifest straight = RunStage(Stage::kTts, cfg, TtsInputs(dir / "straight"));
  const auto want = ReadLossLog(straight.loss_log);
  ASSERT_EQ(want.size(), rows.size());
  for (size_t i = 0; i < rows.size(); ++i) EXPECT_EQ(rows[i].values, want[i].values) << i;

  Config other = cfg;
  other.Set("tts.learning_rate", "0.5");
  in.out = dir / "run";
  EXPECT_EQ(CodeOf([&] { RunStage(Stage::kTts, other, in); }), ErrorCode::kBadConfig);
}

TEST(TrainingTest, FreezeViolationIsReported) {
  TempDir dir("tts_freeze");
  Config cfg = ShortConfig();
  StageInputs in = TtsInputs(dir / "run");
  in.after_step = [](long step, TextStyleModel&, StyleExtractorModel& extractor) {
    if (step == 3) extractor.mutable_codebook()(0, 0) += 1.0;
  };
  EXPECT_EQ(CodeOf([&] { RunStage(Stage::kTts, cfg, in); }),
            ErrorCode::kFrozenContractViolation);
  const RunManifest m = ReadRunManifest(dir / "run/run.json");
  EXPECT_EQ(m.frozen_report, std::vector<std::string>{"style_extractor"});
  EXPECT_EQ(m.steps, 3);
}

TEST(TrainingTest, VerifyFrozen) {
  const ChecksumMap before = {{"text_style", 1}, {"style_extractor", 2}};
  EXPECT_TRUE(VerifyFrozen(before, before, {"text_style", "style_extractor"}).empty());
  ChecksumMap after = before;
  after["text_style"] = 5;
  EXPECT_EQ(VerifyFrozen(before, after, {"text_style", "style_extractor"}),
            std::vector<std::string>{"text_style"});
  EXPECT_TRUE(VerifyFrozen(before, after, {"style_extractor"}).empty());
  EXPECT_EQ(VerifyFrozen(before, {}, {"style_extractor"}),
            std::vector<std::string>{"style_extractor"});
}

TEST(TrainingTest, ConfigHashIgnoresKeyOrder) {
  const Config a = Config::FromString("seed = 3\nd_style = 8\ntts.alpha = 1\n");
  const Config b = Config::FromString("tts.alpha = 1\nseed = 3\nd_style = 8\n");
  EXPECT_EQ(a.Hash(), b.Hash());
  EXPECT_NE(a.Hash(), Config::FromString("seed = 4\nd_style = 8\ntts.alpha = 1\n").Hash());
}

TEST(TrainingTest, AblationRunsRecordGroups) {
  TempDir dir("tts_ablation");
  Config cfg = ShortConfig();
  cfg.Set("tts.epochs", "1");
  cfg.Set("tts.ablation", "no_style_decoder");
  const RunManifest m = RunStage(Stage::kTts, cfg, TtsInputs(dir / "nd"));
  EXPECT_FALSE(m.details.at("parameter_groups").contains("style_decoder"));
  cfg.Set("tts.ablation", "no_style_extractor");
  const RunManifest e = RunStage(Stage::kTts, cfg, TtsInputs(dir / "ne"));
  EXPECT_EQ(e.details.at("stage_config").at("effective_alpha"), 0.0);
  for (const auto& row : ReadLossLog(e.loss_log)) {
    EXPECT_EQ(row.values.at("total"), row.values.at("tts"));
  }
}

TEST(TrainingTest, StageConfigDefaults) {
  const StageConfig c = StageConfig::FromConfig(Stage::kTts, Config());
  EXPECT_EQ(c.batch_size, 16);
  EXPECT_EQ(c.adam_beta1, 0.9);
  EXPECT_EQ(c.adam_beta2, 0.98);
  EXPECT_EQ(c.alpha, 1.0);
  EXPECT_EQ(c.freeze, (std::vector<std::string>{"text_style", "style_extractor"}));
  EXPECT_EQ(ParseStage("style_extractor"), Stage::kStyleExtractor);
}

}  // namespace
}  // namespace duopath
