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

#include "duopath/training.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <sstream>

#include "duopath/checkpoint.h"
#include "duopath/corpus.h"
#include "duopath/style_extractor.h"
#include "duopath/text_style.h"

namespace duopath {

namespace fs = std::filesystem;
using nlohmann::json;

std::string StageName(Stage s) {
  switch (s) {
    case Stage::kTextStyle: return "text_style";
    case Stage::kStyleExtractor: return "style_extractor";
    case Stage::kTts: return "tts";
  }
  return "text_style";
}

Stage ParseStage(const std::string& name) {
  for (Stage s : {Stage::kTextStyle, Stage::kStyleExtractor, Stage::kTts}) {
    if (StageName(s) == name) return s;
  }
  throw Error(ErrorCode::kBadConfig, "unknown stage: " + name);
}

StageConfig StageConfig::FromConfig(Stage stage, const Config& cfg) {
  StageConfig c;
  c.stage = stage;
  switch (stage) {
    case Stage::kTextStyle: {
      const TextStyleTrainConfig t = TextStyleTrainConfig::FromConfig(cfg);
      c.batch_size = t.batch_size;
      c.learning_rate = t.learning_rate;
      c.warmup_steps = t.warmup_steps;
      c.epochs = t.epochs_contrastive + t.epochs_cluster;
      c.seed = t.seed;
      break;
    }
    case Stage::kStyleExtractor: {
      const ExtractorTrainConfig t = ExtractorTrainConfig::FromConfig(cfg);
      c.batch_size = t.batch_size;
      c.learning_rate = t.learning_rate;
      c.warmup_steps = t.warmup_steps;
      c.epochs = t.epochs;
      c.seed = t.seed;
      c.freeze = {"text_style"};
      break;
    }
    case Stage::kTts: {
      const TtsTrainConfig t = TtsTrainConfig::FromConfig(cfg);
      c.batch_size = t.batch_size;
      c.learning_rate = t.learning_rate;
      c.warmup_steps = t.warmup_steps;
      c.epochs = t.epochs;
      c.seed = t.seed;
      c.alpha = t.alpha;
      c.ablation = AcousticConfig::FromConfig(cfg).ablation;
      c.freeze = {"text_style", "style_extractor"};
      break;
    }
  }
  return c;
}

json StageConfig::ToJson() const {
  return {{"stage", StageName(stage)},
          {"batch_size", batch_size},
          {"adam_beta1", adam_beta1},
          {"adam_beta2", adam_beta2},
          {"learning_rate", learning_rate},
          {"warmup_steps", warmup_steps},
          {"epochs", epochs},
          {"seed", seed},
          {"alpha", alpha},
          {"effective_alpha", EffectiveAlpha(alpha, ablation)},
          {"freeze", freeze},
          {"ablation", AblationName(ablation)}};
}

json RunManifest::ToJson() const {
  return {{"stage", stage},
          {"config_hash", config_hash},
          {"run_dir", run_dir},
          {"loss_log", loss_log},
          {"checkpoints", checkpoints},
          {"steps", steps},
          {"epochs_completed", epochs_completed},
          {"stopped", stopped},
          {"initial_loss", initial_loss},
          {"final_loss", final_loss},
          {"best_value", best_value},
          {"frozen_report", frozen_report},
          {"details", details}};
}

RunManifest RunManifest::FromJson(const json& j) {
  RunManifest m;
  m.stage = j.at("stage");
  m.config_hash = j.at("config_hash");
  m.run_dir = j.at("run_dir");
  m.loss_log = j.at("loss_log");
  m.checkpoints = j.at("checkpoints").get<std::map<std::string, std::string>>();
  m.steps = j.at("steps");
  m.epochs_completed = j.at("epochs_completed");
  m.stopped = j.at("stopped");
  m.initial_loss = j.at("initial_loss");
  m.final_loss = j.at("final_loss");
  m.best_value = j.at("best_value");
  m.frozen_report = j.at("frozen_report").get<std::vector<std::string>>();
  m.details = j.value("details", json::object());
  return m;
}

RunManifest ReadRunManifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path);
  return RunManifest::FromJson(json::parse(in));
}

std::string RunDirFor(Stage stage, const std::string& out) {
  if (stage == Stage::kTts) return out;
  fs::path p(out);
  const std::string stem = p.extension() == ".ckpt" ? p.stem().string() : p.filename().string();
  return (p.parent_path() / (stem + "_run")).string();
}

std::vector<std::string> VerifyFrozen(const ChecksumMap& before, const ChecksumMap& after,
                                      const std::vector<std::string>& frozen) {
  std::vector<std::string> report;
  for (const std::string& name : frozen) {
    auto b = before.find(name);
    auto a = after.find(name);
    if (b == before.end() || a == after.end() || b->second != a->second) {
      report.push_back(name);
    }
  }
  return report;
}

std::vector<LossLogRow> ReadLossLog(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path);
  std::string line;
  std::vector<std::string> header;
  if (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  std::vector<LossLogRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    LossLogRow row;
    for (size_t c = 0; std::getline(ss, cell, ','); ++c) {
      if (c >= header.size()) break;
      const double v = std::stod(cell);
      if (header[c] == "step") {
        row.step = static_cast<long>(v);
      } else if (header[c] == "epoch") {
        row.epoch = static_cast<int>(v);
      } else {
        row.values[header[c]] = v;
      }
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

namespace {

std::vector<std::string> LossColumns(Stage stage) {
  switch (stage) {
    case Stage::kTextStyle: return {"contrastive", "cluster", "recon", "total"};
    case Stage::kStyleExtractor: return {"recon", "vq", "commit", "total"};
    case Stage::kTts: return {"mel", "duration", "pitch", "energy", "style", "tts", "total"};
  }
  return {};
}

std::string FormatDouble(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Per-step CSV. When resuming, rows past the restored step are dropped so the
// log continues without gaps or duplicates.
class LossLog {
 public:
  LossLog(const std::string& path, Stage stage, long keep_through, bool resume)
      : path_(path), columns_(LossColumns(stage)) {
    std::vector<std::string> kept;
    if (resume && fs::exists(path)) {
      std::ifstream in(path);
      std::string line;
      std::getline(in, line);
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        const long step = std::stol(line.substr(0, line.find(',')));
        if (step <= keep_through) kept.push_back(line);
      }
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path);
    out << "step,epoch";
    for (const auto& c : columns_) out << ',' << c;
    out << '\n';
    for (const auto& l : kept) out << l << '\n';
  }

  void Append(const StepRecord& rec) {
    std::ofstream out(path_, std::ios::app);
    out << rec.step << ',' << rec.epoch;
    for (const auto& c : columns_) {
      double v = 0.0;
      for (const auto& [name, value] : rec.losses) {
        if (name == c) v = value;
      }
      out << ',' << FormatDouble(v);
    }
    out << '\n';
  }

 private:
  std::string path_;
  std::vector<std::string> columns_;
};

struct ResumePoint {
  std::vector<std::pair<std::string, Matrix>> optimizer;
  long step = 0;
  int epochs_completed = 0;
  double best_value = std::numeric_limits<double>::infinity();
  double initial_loss = 0.0;
};

void SaveOptimizer(const std::string& path, const Adam& adam, const std::string& hash,
                   int epochs_completed, double best, double initial) {
  Checkpoint ck;
  ck.kind = "optimizer";
  ck.meta["step"] = adam.step();
  ck.meta["epochs_completed"] = epochs_completed;
  ck.meta["best_value"] = std::isfinite(best) ? json(best) : json(nullptr);
  ck.meta["initial_loss"] = initial;
  ck.meta["config_hash"] = hash;
  ck.tensors = adam.ExportState();
  ck.Save(path);
}

ResumePoint LoadOptimizer(const std::string& path, const std::string& hash) {
  const Checkpoint ck = Checkpoint::Load(path, "optimizer");
  if (ck.meta.at("config_hash").get<std::string>() != hash) {
    throw Error(ErrorCode::kBadConfig,
                "cannot resume: configuration differs from the interrupted run");
  }
  ResumePoint r;
  r.optimizer = ck.tensors;
  r.step = ck.meta.at("step");
  r.epochs_completed = ck.meta.at("epochs_completed");
  if (!ck.meta.at("best_value").is_null()) r.best_value = ck.meta.at("best_value");
  r.initial_loss = ck.meta.value("initial_loss", 0.0);
  return r;
}

void RequireCheckpoint(const std::string& path, const std::string& what) {
  if (path.empty() || !fs::exists(path)) {
    throw Error(ErrorCode::kStageOrderViolation,
                what + " checkpoint is required first: " + (path.empty() ? "(none)" : path));
  }
}

void WriteRunManifest(const RunManifest& m) {
  std::ofstream out(fs::path(m.run_dir) / "run.json");
  if (!out) throw Error(ErrorCode::kIoError, "cannot write run.json in " + m.run_dir);
  out << m.ToJson().dump(2) << '\n';
}

// Book-keeping shared by the three stages: loss log, save points, best model
// selection and run.json.
class StageRun {
 public:
  StageRun(Stage stage, const Config& cfg, const StageInputs& in)
      : stage_(stage),
        in_(in),
        monitor_(stage == Stage::kStyleExtractor ? "recon" : "total") {
    manifest_.stage = StageName(stage);
    manifest_.config_hash = cfg.Hash();
    manifest_.run_dir = RunDirFor(stage, in.out);
    fs::create_directories(manifest_.run_dir);
    const fs::path dir(manifest_.run_dir);
    last_ = (dir / "last.ckpt").string();
    optim_ = (dir / "last.optim").string();
    best_ = (dir / "best.ckpt").string();
    manifest_.loss_log = (dir / "loss_log.csv").string();
    manifest_.checkpoints["last"] = last_;
    manifest_.checkpoints["optimizer"] = optim_;
    manifest_.checkpoints["best"] = best_;
    manifest_.details["stage_config"] = StageConfig::FromConfig(stage, cfg).ToJson();
    manifest_.details["config"] = cfg.values();
    manifest_.details["loss_column"] = monitor_;
    if (in.resume && fs::exists(optim_) && fs::exists(last_)) {
      point_ = LoadOptimizer(optim_, manifest_.config_hash);
      resuming_ = true;
    }
    log_ = std::make_unique<LossLog>(manifest_.loss_log, stage, point_.step, resuming_);
    manifest_.initial_loss = point_.initial_loss;
    manifest_.epochs_completed = point_.epochs_completed;
    manifest_.best_value = point_.best_value;
  }

  bool resuming() const { return resuming_; }
  const std::string& last_path() const { return last_; }
  RunManifest& manifest() { return manifest_; }

  TrainControl Control(const std::function<void(const std::string&)>& save_model) {
    TrainControl c;
    c.resume_state = point_.optimizer;
    c.max_steps = in_.max_steps;
    c.on_step = [this](const StepRecord& r) {
      log_->Append(r);
      manifest_.steps = r.step;
      for (const auto& [name, v] : r.losses) {
        if (name == monitor_) manifest_.final_loss = v;
      }
    };
    c.on_save = [this, save_model](const Adam& adam, int epoch, bool complete) {
      save_model(last_);
      if (complete) {
        manifest_.epochs_completed = epoch + 1;
        if (pending_selection_ < manifest_.best_value) {
          manifest_.best_value = pending_selection_;
          save_model(best_);
        }
      }
      manifest_.steps = adam.step();
      SaveOptimizer(optim_, adam, manifest_.config_hash, manifest_.epochs_completed,
                    manifest_.best_value, manifest_.initial_loss);
    };
    return c;
  }

  // Selection loss of the epoch that is about to be saved.
  void SetSelection(double v) { pending_selection_ = v; }
  void SetInitial(double v) {
    if (!resuming_) manifest_.initial_loss = v;
  }

  void Finish(bool stopped, const std::string& final_copy) {
    manifest_.stopped = stopped;
    if (!fs::exists(best_) && fs::exists(last_)) fs::copy_file(last_, best_);
    if (!std::isfinite(manifest_.best_value)) manifest_.best_value = manifest_.final_loss;
    if (!final_copy.empty() && !stopped) {
      if (fs::path(final_copy).has_parent_path()) {
        fs::create_directories(fs::path(final_copy).parent_path());
      }
      fs::copy_file(best_, final_copy, fs::copy_options::overwrite_existing);
      manifest_.checkpoints["output"] = final_copy;
    }
    WriteRunManifest(manifest_);
  }

 private:
  Stage stage_;
  StageInputs in_;
  std::string monitor_;  // loss column reported as initial and final loss
  RunManifest manifest_;
  std::string last_, optim_, best_;
  ResumePoint point_;
  bool resuming_ = false;
  std::unique_ptr<LossLog> log_;
  double pending_selection_ = std::numeric_limits<double>::infinity();
};

RunManifest RunTextStyle(const Config& cfg, const StageInputs& in) {
  if (in.text_corpus.empty()) throw Error(ErrorCode::kEmptyCorpus, "no text corpus given");
  const std::vector<std::string> corpus = ReadLines(in.text_corpus);
  const EmotionLexicon lexicon =
      in.lexicon.empty() ? EmotionLexicon() : EmotionLexicon::FromFile(in.lexicon);
  const TextStyleConfig mcfg = TextStyleConfig::FromConfig(cfg);
  const TextStyleTrainConfig tcfg = TextStyleTrainConfig::FromConfig(cfg);
  StageRun run(Stage::kTextStyle, cfg, in);
  TextStyleModel model = run.resuming()
                             ? TextStyleModel::Load(run.last_path())
                             : TextStyleModel(mcfg, Tokenizer::Build(corpus, mcfg.min_count),
                                              tcfg.seed);
  TrainControl control = run.Control([&](const std::string& p) { model.Save(p); });
  const auto result = PretrainStyleEncoder(
      model, corpus, lexicon, tcfg,
      [&](const TextStyleEpoch& e) { run.SetSelection(e.total); }, control);
  if (!run.resuming()) run.SetInitial(result.initial_contrastive);
  run.manifest().details["inputs"] = {{"text", in.text_corpus}, {"lexicon", in.lexicon}};
  run.manifest().details["vocab_size"] = model.tokenizer().size();
  run.Finish(result.stopped, in.out);
  return run.manifest();
}

RunManifest RunStyleExtractor(const Config& cfg, const StageInputs& in) {
  RequireCheckpoint(in.text_ckpt, "text style (stage i)");
  TextStyleModel text = TextStyleModel::Load(in.text_ckpt);
  text.SetFrozen(true);
  const Manifest manifest = ReadManifest(in.manifest);
  const StyleExtractorConfig mcfg = StyleExtractorConfig::FromConfig(cfg);
  const ExtractorTrainConfig tcfg = ExtractorTrainConfig::FromConfig(cfg);
  if (mcfg.d_style != text.d_style()) {
    throw Error(ErrorCode::kBadConfig, "d_style differs from the text style checkpoint");
  }
  StageRun run(Stage::kStyleExtractor, cfg, in);
  StyleExtractorModel model = run.resuming()
                                  ? StyleExtractorModel::Load(run.last_path())
                                  : StyleExtractorModel(mcfg, manifest.speakers(), tcfg.seed);
  TrainControl control = run.Control([&](const std::string& p) { model.Save(p); });
  double last_perplexity = 0.0;
  const auto result = PretrainStyleExtractor(
      model, manifest, text, tcfg,
      [&](const ExtractorEpoch& e) {
        run.SetSelection(e.val_recon >= 0.0 ? e.val_recon : e.recon);
        last_perplexity = e.perplexity;
      },
      control);
  if (!run.resuming()) run.SetInitial(result.initial_recon);
  json epochs = json::array();
  for (const auto& e : result.epochs) {
    epochs.push_back({{"epoch", e.epoch}, {"recon", e.recon}, {"perplexity", e.perplexity},
                      {"dead_codes", e.dead_codes}, {"val_recon", e.val_recon}});
  }
  run.manifest().details["inputs"] = {{"manifest", in.manifest}, {"text_ckpt", in.text_ckpt}};
  run.manifest().details["epochs"] = epochs;
  run.manifest().details["perplexity"] = last_perplexity;
  if (!result.epochs.empty()) {
    run.manifest().details["final_recon"] = result.epochs.back().recon;
  }
  run.Finish(result.stopped, in.out);
  return run.manifest();
}

RunManifest RunTts(const Config& cfg, const StageInputs& in) {
  RequireCheckpoint(in.text_ckpt, "text style (stage i)");
  RequireCheckpoint(in.extractor_ckpt, "style extractor (stage ii)");
  TextStyleModel text = TextStyleModel::Load(in.text_ckpt);
  StyleExtractorModel extractor = StyleExtractorModel::Load(in.extractor_ckpt);
  text.SetFrozen(true);
  extractor.SetFrozen(true);
  const Manifest manifest = ReadManifest(in.manifest);
  const AcousticConfig mcfg = AcousticConfig::FromConfig(cfg);
  const TtsTrainConfig tcfg = TtsTrainConfig::FromConfig(cfg);
  if (mcfg.d_style != text.d_style() || mcfg.d_style != extractor.config().d_style) {
    throw Error(ErrorCode::kBadConfig, "d_style differs from the teacher checkpoints");
  }
  StageRun run(Stage::kTts, cfg, in);
  AcousticModel model = run.resuming()
                            ? AcousticModel::Load(run.last_path())
                            : AcousticModel(mcfg, manifest.phoneme_inventory(), tcfg.seed);
  const std::vector<std::string> frozen = {"text_style", "style_extractor"};
  auto checksums = [&] {
    return ChecksumMap{{"text_style", text.params().Checksum()},
                       {"style_extractor", extractor.params().Checksum()}};
  };
  const ChecksumMap before = checksums();
  TrainControl control = run.Control([&](const std::string& p) { model.Save(p); });
  auto log_step = control.on_step;
  control.on_step = [&](const StepRecord& r) {
    log_step(r);
    if (in.after_step) in.after_step(r.step, text, extractor);
    const auto report = VerifyFrozen(before, checksums(), frozen);
    if (!report.empty()) {
      run.manifest().frozen_report = report;
      run.Finish(true, "");
      throw Error(ErrorCode::kFrozenContractViolation,
                  "frozen teacher changed during training: " + report.front());
    }
  };
  const auto result = TrainAcousticModel(
      model, manifest, text, extractor, tcfg,
      // The best model is chosen on validation mel loss: the variance
      // predictor terms are noisy on small splits and would otherwise pick
      // an early, over-smoothed decoder.
      [&](const TtsEpoch& e) { run.SetSelection(e.val_mel >= 0.0 ? e.val_mel : e.mel); },
      control);
  if (!run.resuming()) run.SetInitial(result.initial_total);
  const fs::path text_copy = fs::path(run.manifest().run_dir) / "text_style.ckpt";
  if (fs::absolute(in.text_ckpt) != fs::absolute(text_copy)) {
    fs::copy_file(in.text_ckpt, text_copy, fs::copy_options::overwrite_existing);
  }
  run.manifest().checkpoints["text_style"] = text_copy.string();
  run.manifest().frozen_report = VerifyFrozen(before, checksums(), frozen);
  run.manifest().details["inputs"] = {{"manifest", in.manifest},
                                      {"text_ckpt", in.text_ckpt},
                                      {"extractor_ckpt", in.extractor_ckpt}};
  json epochs = json::array();
  for (const auto& e : result.epochs) {
    epochs.push_back({{"epoch", e.epoch}, {"total", e.total}, {"mel", e.mel},
                      {"style", e.style}, {"val_total", e.val_total}, {"val_mel", e.val_mel}});
  }
  run.manifest().details["epochs"] = epochs;
  run.manifest().details["selection"] = "val_mel";
  json groups = json::object();
  for (const auto& [g, n] : model.GroupInventory()) groups[g] = n;
  run.manifest().details["parameter_groups"] = groups;
  run.Finish(result.stopped, "");
  return run.manifest();
}

}  // namespace

RunManifest RunStage(Stage stage, const Config& cfg, const StageInputs& in) {
  if (in.out.empty()) throw Error(ErrorCode::kBadConfig, "no output path given");
  switch (stage) {
    case Stage::kTextStyle: return RunTextStyle(cfg, in);
    case Stage::kStyleExtractor: return RunStyleExtractor(cfg, in);
    case Stage::kTts: return RunTts(cfg, in);
  }
  throw Error(ErrorCode::kBadConfig, "unknown stage");
}

std::string TextCheckpointForExtractor(const std::string& extractor_ckpt) {
  const fs::path run_json = fs::path(RunDirFor(Stage::kStyleExtractor, extractor_ckpt)) / "run.json";
  if (!fs::exists(run_json)) return "";
  const RunManifest run = ReadRunManifest(run_json.string());
  const std::string path = run.details.value("inputs", json::object()).value("text_ckpt", "");
  return !path.empty() && fs::exists(path) ? path : "";
}

}  // namespace duopath
