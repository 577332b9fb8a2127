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

#include "duopath/acoustic_model.h"

#include <algorithm>
#include <cmath>

#include "duopath/features.h"

namespace duopath {

using nlohmann::json;

std::string AblationName(Ablation a) {
  switch (a) {
    case Ablation::kNone: return "none";
    case Ablation::kNoStyleEncoder: return "no_style_encoder";
    case Ablation::kNoStyleDecoder: return "no_style_decoder";
    case Ablation::kNoStyleExtractor: return "no_style_extractor";
  }
  return "none";
}

Ablation ParseAblation(const std::string& name) {
  for (Ablation a : {Ablation::kNone, Ablation::kNoStyleEncoder,
                     Ablation::kNoStyleDecoder, Ablation::kNoStyleExtractor}) {
    if (AblationName(a) == name) return a;
  }
  throw Error(ErrorCode::kBadConfig, "unknown ablation: " + name);
}

double EffectiveAlpha(double alpha, Ablation ablation) {
  return ablation == Ablation::kNoStyleExtractor ? 0.0 : alpha;
}

AcousticConfig AcousticConfig::FromConfig(const Config& cfg) {
  AcousticConfig c;
  c.d_model = cfg.GetInt("tts.d_model", c.d_model);
  c.d_style = cfg.GetInt("d_style", c.d_style);
  c.encoder_layers = cfg.GetInt("tts.encoder_layers", c.encoder_layers);
  c.decoder_layers = cfg.GetInt("tts.decoder_layers", c.decoder_layers);
  c.heads = cfg.GetInt("tts.heads", c.heads);
  c.filter = cfg.GetInt("tts.filter", c.filter);
  c.kernel = cfg.GetInt("tts.kernel", c.kernel);
  c.predictor_filter = cfg.GetInt("tts.predictor_filter", c.predictor_filter);
  c.predictor_kernel = cfg.GetInt("tts.predictor_kernel", c.predictor_kernel);
  c.style_heads = cfg.GetInt("tts.style_heads", c.style_heads);
  c.style_conv_layers = cfg.GetInt("tts.style_conv_layers", c.style_conv_layers);
  c.style_kernel = cfg.GetInt("tts.style_kernel", c.style_kernel);
  c.n_mels = cfg.GetInt("n_mels", c.n_mels);
  c.context_k = cfg.GetInt("context_k", c.context_k);
  c.ablation = ParseAblation(cfg.GetString("tts.ablation", "none"));
  if (c.d_model % c.heads != 0 || c.d_style % c.style_heads != 0) {
    throw Error(ErrorCode::kBadConfig, "tts widths must divide by the head counts");
  }
  if (c.encoder_layers < 1 || c.decoder_layers < 1 || c.context_k < 0) {
    throw Error(ErrorCode::kBadConfig, "tts layer counts must be positive");
  }
  return c;
}

json AcousticConfig::ToJson() const {
  return {{"d_model", d_model},
          {"d_style", d_style},
          {"encoder_layers", encoder_layers},
          {"decoder_layers", decoder_layers},
          {"heads", heads},
          {"filter", filter},
          {"kernel", kernel},
          {"predictor_filter", predictor_filter},
          {"predictor_kernel", predictor_kernel},
          {"style_heads", style_heads},
          {"style_conv_layers", style_conv_layers},
          {"style_kernel", style_kernel},
          {"n_mels", n_mels},
          {"context_k", context_k},
          {"ablation", AblationName(ablation)}};
}

AcousticConfig AcousticConfig::FromJson(const json& j) {
  AcousticConfig c;
  c.d_model = j.at("d_model");
  c.d_style = j.at("d_style");
  c.encoder_layers = j.at("encoder_layers");
  c.decoder_layers = j.at("decoder_layers");
  c.heads = j.at("heads");
  c.filter = j.at("filter");
  c.kernel = j.at("kernel");
  c.predictor_filter = j.at("predictor_filter");
  c.predictor_kernel = j.at("predictor_kernel");
  c.style_heads = j.at("style_heads");
  c.style_conv_layers = j.at("style_conv_layers");
  c.style_kernel = j.at("style_kernel");
  c.n_mels = j.at("n_mels");
  c.context_k = j.at("context_k");
  c.ablation = ParseAblation(j.at("ablation").get<std::string>());
  return c;
}

ag::Var LengthRegulate(const ag::Var& h, const std::vector<int>& durations) {
  long total = 0;
  for (int d : durations) {
    if (d < 0) throw Error(ErrorCode::kShapeMismatch, "negative duration");
    total += d;
  }
  if (total == 0) throw Error(ErrorCode::kEmptyExpansion, "all durations are zero");
  return ag::RepeatRows(h, durations);
}

std::vector<int> DurationsFromLog(const Vector& log_durations) {
  std::vector<int> out(static_cast<size_t>(log_durations.size()));
  for (Eigen::Index i = 0; i < log_durations.size(); ++i) {
    const double frames = std::exp(log_durations[i]) - 1.0;
    const double rounded = std::floor(frames + 0.5);
    out[i] = static_cast<int>(std::clamp(rounded, 1.0, 1e6));
  }
  return out;
}

AcousticModel::Predictor AcousticModel::MakePredictor(const std::string& name, Rng& rng) {
  Predictor p;
  const int f = cfg_.predictor_filter;
  p.conv1 = Conv1d(params_, name + ".conv1", cfg_.d_model, f, cfg_.predictor_kernel, rng);
  p.ln1 = LayerNorm(params_, name + ".ln1", f);
  p.conv2 = Conv1d(params_, name + ".conv2", f, f, cfg_.predictor_kernel, rng);
  p.ln2 = LayerNorm(params_, name + ".ln2", f);
  p.out = Linear(params_, name + ".out", f, 1, rng);
  return p;
}

AcousticModel::AcousticModel(const AcousticConfig& cfg, std::vector<std::string> phonemes,
                             uint64_t seed)
    : cfg_(cfg), phonemes_(std::move(phonemes)) {
  if (phonemes_.empty()) throw Error(ErrorCode::kBadConfig, "empty phoneme inventory");
  Rng rng(MixSeed(seed, 31));
  const int dm = cfg_.d_model;
  const int ds = cfg_.d_style;
  phoneme_table_ = Embedding(params_, "encoder.phoneme_embedding",
                             static_cast<int>(phonemes_.size()), dm, rng, 1.0);
  for (int i = 0; i < cfg_.encoder_layers; ++i) {
    encoder_.emplace_back(params_, "encoder.block" + std::to_string(i), dm, cfg_.heads,
                          cfg_.filter, cfg_.kernel, rng);
  }
  style_proj_ = Linear(params_, "adaptor.style_proj", ds, dm, rng);
  duration_ = MakePredictor("adaptor.duration", rng);
  pitch_ = MakePredictor("adaptor.pitch", rng);
  energy_ = MakePredictor("adaptor.energy", rng);
  pitch_embed_ = Conv1d(params_, "adaptor.pitch_embed", 1, ds, 3, rng);
  energy_embed_ = Conv1d(params_, "adaptor.energy_embed", 1, ds, 3, rng);
  if (has_style_decoder()) {
    cross_attn_ = MultiHeadAttention(params_, "style_decoder.cross_attention", ds, ds,
                                     cfg_.style_heads, rng);
    for (int i = 0; i < cfg_.style_conv_layers; ++i) {
      const std::string n = "style_decoder.conv" + std::to_string(i);
      style_convs_.emplace_back(params_, n, ds, ds, cfg_.style_kernel, rng);
      style_bns_.emplace_back(params_, n + ".bn", ds);
    }
    style_out_ = Linear(params_, "style_decoder.out", ds, ds, rng);
    for (int i = 0; i < cfg_.decoder_layers; ++i) {
      inject_.emplace_back(params_, "style_decoder.inject" + std::to_string(i), ds, dm,
                           rng, /*zero_init=*/true);
    }
  } else if (ds != dm) {
    style_in_ = Linear(params_, "decoder.style_in", ds, dm, rng);
  }
  for (int i = 0; i < cfg_.decoder_layers; ++i) {
    decoder_.emplace_back(params_, "decoder.block" + std::to_string(i), dm, cfg_.heads,
                          cfg_.filter, cfg_.kernel, rng);
  }
  mel_out_ = Linear(params_, "decoder.mel_linear", dm, cfg_.n_mels, rng);
}

void AcousticModel::Save(const std::string& path) const {
  Checkpoint ck;
  ck.kind = "acoustic";
  ck.meta["config"] = cfg_.ToJson();
  ck.meta["phonemes"] = phonemes_;
  ck.tensors = params_.Export();
  ck.Save(path);
}

AcousticModel AcousticModel::Load(const std::string& path) {
  const Checkpoint ck = Checkpoint::Load(path, "acoustic");
  AcousticModel m(AcousticConfig::FromJson(ck.meta.at("config")),
                  ck.meta.at("phonemes").get<std::vector<std::string>>(), 0);
  m.params_.Load(ck.tensors);
  return m;
}

std::vector<int> AcousticModel::PhonemeIds(const std::vector<std::string>& symbols) const {
  std::vector<int> ids;
  ids.reserve(symbols.size());
  for (const std::string& s : symbols) {
    auto it = std::find(phonemes_.begin(), phonemes_.end(), s);
    if (it == phonemes_.end()) {
      throw Error(ErrorCode::kUnknownPhoneme, "phoneme not in inventory: " + s);
    }
    ids.push_back(static_cast<int>(it - phonemes_.begin()));
  }
  return ids;
}

std::map<std::string, size_t> AcousticModel::GroupInventory() const {
  std::map<std::string, size_t> out;
  for (const std::string& g : params_.Groups()) out[g] = params_.TrainableCount(g);
  return out;
}

ag::Var AcousticModel::EncodePhonemes(Tape& tape, const std::vector<int>& ids) const {
  if (ids.empty()) throw Error(ErrorCode::kShapeMismatch, "empty phoneme sequence");
  for (int id : ids) {
    if (id < 0 || id >= static_cast<int>(phonemes_.size())) {
      throw Error(ErrorCode::kUnknownPhoneme, "phoneme id out of range: " + std::to_string(id));
    }
  }
  const auto n = static_cast<Eigen::Index>(ids.size());
  ag::Var x = ag::AddConstant(phoneme_table_(tape, ids), SinusoidalPositions(n, cfg_.d_model));
  for (const FftBlock& b : encoder_) x = b(tape, x);
  return x;
}

ag::Var AcousticModel::RunPredictor(Tape& tape, const Predictor& p, const ag::Var& x) const {
  ag::Var h = p.ln1(tape, ag::Relu(p.conv1(tape, x)));
  h = p.ln2(tape, ag::Relu(p.conv2(tape, h)));
  return p.out(tape, h);
}

RowVector AcousticModel::StyleInput(const RowVector& h_s) const {
  if (h_s.size() != cfg_.d_style) {
    throw Error(ErrorCode::kShapeMismatch, "style vector width differs from d_style");
  }
  if (cfg_.ablation == Ablation::kNoStyleEncoder) return RowVector::Zero(cfg_.d_style);
  return h_s;
}

VarianceResult AcousticModel::VarianceAdapt(Tape& tape, const ag::Var& h_p,
                                            const RowVector& h_s,
                                            const VarianceTargets* targets) const {
  if (tape.training() && !targets) {
    throw Error(ErrorCode::kMissingTargets, "training forward needs ground-truth targets");
  }
  const Eigen::Index n = h_p.rows();
  const RowVector style = StyleInput(h_s);
  ag::Var h_ps = h_p;
  if (cfg_.ablation != Ablation::kNoStyleEncoder) {
    h_ps = ag::AddRow(h_p, style_proj_(tape, ag::Constant(Matrix(style))));
  }
  VarianceResult r;
  r.dur_pred = RunPredictor(tape, duration_, h_ps);
  r.pitch_pred = RunPredictor(tape, pitch_, h_ps);
  r.energy_pred = RunPredictor(tape, energy_, h_ps);

  if (targets && !targets->durations.empty()) {
    if (static_cast<Eigen::Index>(targets->durations.size()) != n) {
      throw Error(ErrorCode::kShapeMismatch, "duration count differs from phoneme count");
    }
    r.durations = targets->durations;
  } else {
    r.durations = DurationsFromLog(r.dur_pred.value().col(0));
  }
  auto pick = [&](const Vector* target, const ag::Var& pred) {
    if (target && target->size() > 0) {
      if (target->size() != n) {
        throw Error(ErrorCode::kShapeMismatch, "prosody target length differs from N");
      }
      return ag::Constant(Matrix(*target));
    }
    return ag::Detach(pred);
  };
  const ag::Var pitch_in = pick(targets ? &targets->pitch : nullptr, r.pitch_pred);
  const ag::Var energy_in = pick(targets ? &targets->energy : nullptr, r.energy_pred);
  ag::Var style_seq = ag::Add(pitch_embed_(tape, pitch_in), energy_embed_(tape, energy_in));
  style_seq = ag::AddRow(style_seq, ag::Constant(Matrix(style)));
  r.h_s_frame = LengthRegulate(style_seq, r.durations);
  r.h_p_frame = LengthRegulate(h_p, r.durations);
  return r;
}

ag::Var AcousticModel::StyleDecode(Tape& tape, const ag::Var& h_s_frame, const Matrix& h_cs,
                                   std::vector<Matrix>* attention) const {
  if (!has_style_decoder()) {
    throw Error(ErrorCode::kBadConfig, "model was built without the style decoder");
  }
  if (h_cs.cols() != cfg_.d_style || h_cs.rows() < 1 || h_s_frame.cols() != cfg_.d_style) {
    throw Error(ErrorCode::kShapeMismatch, "style decoder input widths");
  }
  const Matrix context = cfg_.ablation == Ablation::kNoStyleEncoder
                             ? Matrix(Matrix::Zero(h_cs.rows(), h_cs.cols()))
                             : h_cs;
  ag::Var x = ag::Add(h_s_frame, cross_attn_(tape, h_s_frame, ag::Constant(context), attention));
  for (size_t i = 0; i < style_convs_.size(); ++i) {
    x = ag::Relu(style_bns_[i](tape, style_convs_[i](tape, x)));
  }
  return style_out_(tape, x);
}

DecoderResult AcousticModel::MelDecode(Tape& tape, const ag::Var& h_p_frame,
                                       const ag::Var& h_sd, const ag::Var& h_s_frame) const {
  const Eigen::Index t = h_p_frame.rows();
  ag::Var x = ag::AddConstant(h_p_frame, SinusoidalPositions(t, cfg_.d_model));
  if (has_style_decoder()) {
    if (h_sd.rows() != t) throw Error(ErrorCode::kShapeMismatch, "decoder frame mismatch");
    for (size_t b = 0; b < decoder_.size(); ++b) {
      x = decoder_[b](tape, ag::Add(x, inject_[b](tape, h_sd)));
    }
  } else {
    if (!h_s_frame.defined() || h_s_frame.rows() != t) {
      throw Error(ErrorCode::kShapeMismatch, "decoder frame mismatch");
    }
    x = ag::Add(x, cfg_.d_style == cfg_.d_model ? h_s_frame : style_in_(tape, h_s_frame));
    for (const FftBlock& b : decoder_) x = b(tape, x);
  }
  DecoderResult r;
  r.hidden = x;
  r.mel = mel_out_(tape, x);
  return r;
}

TtsForward AcousticModel::Forward(Tape& tape, const TtsExample& ex) const {
  VarianceTargets targets{ex.durations, ex.pitch, ex.energy};
  TtsForward out;
  const ag::Var h_p = EncodePhonemes(tape, ex.phonemes);
  out.variance = VarianceAdapt(tape, h_p, ex.h_s, &targets);
  if (has_style_decoder()) {
    out.h_sd = StyleDecode(tape, out.variance.h_s_frame, ex.h_cs);
    out.decoder = MelDecode(tape, out.variance.h_p_frame, out.h_sd);
  } else {
    out.decoder = MelDecode(tape, out.variance.h_p_frame, ag::Var(), out.variance.h_s_frame);
  }
  return out;
}

TtsLosses AcousticModel::Loss(const TtsForward& out, const TtsExample& ex,
                              double alpha) const {
  const Eigen::Index t = out.decoder.mel.rows();
  if (ex.mel.rows() != t || ex.h_se.rows() != t) {
    throw Error(ErrorCode::kShapeMismatch, "targets do not cover the expanded frames");
  }
  TtsLosses l;
  l.mel = ag::L1Loss(out.decoder.mel, ag::Constant(ex.mel));
  Matrix log_dur(static_cast<Eigen::Index>(ex.durations.size()), 1);
  for (size_t i = 0; i < ex.durations.size(); ++i) {
    log_dur(static_cast<Eigen::Index>(i), 0) = std::log(ex.durations[i] + 1.0);
  }
  l.duration = ag::MseLoss(out.variance.dur_pred, ag::Constant(log_dur));
  l.pitch = ag::MseLoss(out.variance.pitch_pred, ag::Constant(Matrix(ex.pitch)));
  l.energy = ag::MseLoss(out.variance.energy_pred, ag::Constant(Matrix(ex.energy)));
  const ag::Var& style_out = has_style_decoder() ? out.h_sd : out.variance.h_s_frame;
  l.style = ag::MseLoss(style_out, ag::Constant(ex.h_se));
  l.tts = ag::Add(ag::Add(l.mel, l.duration), ag::Add(l.pitch, l.energy));
  l.total = ag::Add(l.tts, ag::Scale(l.style, EffectiveAlpha(alpha, cfg_.ablation)));
  return l;
}

Synthesis AcousticModel::Infer(const std::vector<int>& ids, const RowVector& h_s,
                               const Matrix& h_cs, const std::vector<int>& durations) const {
  Tape tape(false);
  const ag::Var h_p = EncodePhonemes(tape, ids);
  VarianceTargets targets;
  targets.durations = durations;
  VarianceResult v = VarianceAdapt(tape, h_p, h_s, durations.empty() ? nullptr : &targets);
  DecoderResult d;
  if (has_style_decoder()) {
    d = MelDecode(tape, v.h_p_frame, StyleDecode(tape, v.h_s_frame, h_cs));
  } else {
    d = MelDecode(tape, v.h_p_frame, ag::Var(), v.h_s_frame);
  }
  Synthesis s;
  s.mel = d.mel.value();
  s.durations = v.durations;
  s.pitch = v.pitch_pred.value().col(0);
  s.energy = v.energy_pred.value().col(0);
  return s;
}

std::vector<TtsExample> BuildTtsExamples(const Manifest& manifest,
                                         const std::vector<const UtteranceRecord*>& records,
                                         const ProsodyStats& stats,
                                         const AcousticModel& model,
                                         const TextStyleModel& text_model,
                                         StyleExtractorModel& extractor) {
  const AcousticConfig& cfg = model.config();
  const int low_band = extractor.config().low_band;
  std::vector<TtsExample> out;
  out.reserve(records.size());
  for (const UtteranceRecord* r : records) {
    const AcousticFeatures f = ReadFeatureCache(manifest.FeaturePath(r->id), low_band);
    if (f.frames() != r->frames()) {
      throw Error(ErrorCode::kAlignmentMismatch,
                  r->id + ": cached frames differ from the duration sum");
    }
    if (f.mel.cols() != cfg.n_mels) {
      throw Error(ErrorCode::kShapeMismatch, r->id + ": mel bins differ from n_mels");
    }
    const NormalizedProsody p = NormalizeProsody(f, stats, r->speaker_id);
    TtsExample ex;
    ex.id = r->id;
    ex.phonemes = model.PhonemeIds(r->phonemes);
    ex.durations = r->durations;
    ex.pitch = PhonemeAverage(p.f0, r->durations);
    ex.energy = PhonemeAverage(p.energy, r->durations);
    ex.mel = f.mel;
    ex.h_s = text_model.EncodeStyle(r->text);
    ex.h_cs = text_model.EncodeContext(BuildContextWindow(manifest, r->id, cfg.context_k));
    ex.h_se = extractor.ExtractStyle(f.mel20, p.f0, p.energy, ex.h_s);
    out.push_back(std::move(ex));
  }
  return out;
}

TtsTrainConfig TtsTrainConfig::FromConfig(const Config& cfg) {
  TtsTrainConfig c;
  c.batch_size = cfg.GetInt("tts.batch_size", cfg.GetInt("batch_size", c.batch_size));
  c.epochs = cfg.GetInt("tts.epochs", c.epochs);
  c.learning_rate = cfg.GetDouble("tts.learning_rate", c.learning_rate);
  c.warmup_steps = cfg.GetInt("tts.warmup_steps", cfg.GetInt("warmup_steps", c.warmup_steps));
  c.grad_clip = cfg.GetDouble("tts.grad_clip", c.grad_clip);
  c.alpha = cfg.GetDouble("tts.alpha", c.alpha);
  c.seed = static_cast<uint64_t>(cfg.GetInt("seed", static_cast<int>(c.seed)));
  if (c.alpha < 0.0) throw Error(ErrorCode::kBadConfig, "tts.alpha must be >= 0");
  return c;
}

TtsTrainResult TrainAcousticModel(AcousticModel& model, const Manifest& manifest,
                                  const TextStyleModel& text_model,
                                  StyleExtractorModel& extractor,
                                  const TtsTrainConfig& cfg,
                                  const std::function<void(const TtsEpoch&)>& on_epoch,
                                  const TrainControl& control) {
  if (!text_model.frozen() || !extractor.frozen()) {
    throw Error(ErrorCode::kFrozenContractViolation,
                "text style encoder and style extractor must be frozen");
  }
  const auto train_records = manifest.Split("train");
  if (train_records.empty()) throw Error(ErrorCode::kEmptyCorpus, "no training records");
  const ProsodyStats stats = ReadStats(manifest.StatsPath());
  const auto train =
      BuildTtsExamples(manifest, train_records, stats, model, text_model, extractor);
  const auto val =
      BuildTtsExamples(manifest, manifest.Split("val"), stats, model, text_model, extractor);

  AdamConfig acfg;
  acfg.learning_rate = cfg.learning_rate;
  acfg.warmup_steps = cfg.warmup_steps;
  acfg.grad_clip = cfg.grad_clip;
  Adam adam(model.params(), acfg);
  const long done = control.Restore(adam);

  TtsTrainResult result;
  const int bs = std::max(1, cfg.batch_size);
  const long per_epoch = static_cast<long>((train.size() + bs - 1) / bs);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const long first = epoch * per_epoch;
    if (first + per_epoch <= done) continue;
    Rng order_rng(MixSeed(cfg.seed, 5000 + static_cast<uint64_t>(epoch)));
    const std::vector<size_t> order = order_rng.Permutation(train.size());
    TtsEpoch rec;
    rec.epoch = epoch;
    int batches = 0;
    for (size_t s = 0; s < order.size(); s += bs) {
      const long global = first + static_cast<long>(s / bs);
      if (global < done) continue;
      const size_t e = std::min(order.size(), s + bs);
      const double w = 1.0 / static_cast<double>(e - s);
      Tape tape(true);
      ag::Var loss;
      TtsEpoch acc;
      for (size_t i = s; i < e; ++i) {
        const TtsExample& ex = train[order[i]];
        TtsLosses l = model.Loss(model.Forward(tape, ex), ex, cfg.alpha);
        acc.tts += w * l.tts.scalar();
        acc.mel += w * l.mel.scalar();
        acc.duration += w * l.duration.scalar();
        acc.pitch += w * l.pitch.scalar();
        acc.energy += w * l.energy.scalar();
        acc.style += w * l.style.scalar();
        ag::Var term = ag::Scale(l.total, w);
        loss = loss.defined() ? ag::Add(loss, term) : term;
      }
      acc.total = loss.scalar();
      if (global == 0) result.initial_total = acc.total;
      if (!std::isfinite(acc.total)) {
        throw Error(ErrorCode::kNumericalError, "tts loss is not finite");
      }
      ag::Backward(loss);
      GradientBuffer grads;
      grads.Add(tape.Gradients());
      adam.Step(grads);
      rec.total += acc.total;
      rec.tts += acc.tts;
      rec.mel += acc.mel;
      rec.duration += acc.duration;
      rec.pitch += acc.pitch;
      rec.energy += acc.energy;
      rec.style += acc.style;
      ++batches;
      if (control.on_step) {
        control.on_step({adam.step(), epoch,
                         {{"mel", acc.mel}, {"duration", acc.duration},
                          {"pitch", acc.pitch}, {"energy", acc.energy},
                          {"style", acc.style}, {"tts", acc.tts},
                          {"total", acc.total}}});
      }
      if (control.Reached(adam.step()) && e < order.size()) {
        if (control.on_save) control.on_save(adam, epoch, false);
        result.stopped = true;
        return result;
      }
    }
    const double nb = static_cast<double>(batches);
    rec.total /= nb;
    rec.tts /= nb;
    rec.mel /= nb;
    rec.duration /= nb;
    rec.pitch /= nb;
    rec.energy /= nb;
    rec.style /= nb;
    rec.step = adam.step();
    if (!val.empty()) {
      double sum = 0.0, mel = 0.0;
      for (const TtsExample& ex : val) {
        Tape tape(false);
        const TtsLosses l = model.Loss(model.Forward(tape, ex), ex, cfg.alpha);
        sum += l.total.scalar();
        mel += l.mel.scalar();
      }
      rec.val_total = sum / static_cast<double>(val.size());
      rec.val_mel = mel / static_cast<double>(val.size());
    }
    result.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (control.on_save) control.on_save(adam, epoch, true);
    if (control.Reached(adam.step()) && epoch + 1 < cfg.epochs) {
      result.stopped = true;
      return result;
    }
  }
  return result;
}

}  // namespace duopath
