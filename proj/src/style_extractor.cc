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

#include "duopath/style_extractor.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>

namespace duopath {

using nlohmann::json;

namespace {

std::atomic<long> g_extract_calls{0};

}  // namespace

QuantizeResult Quantize(const Matrix& codebook, const Matrix& z) {
  if (codebook.cols() != z.cols()) {
    throw Error(ErrorCode::kShapeMismatch, "Quantize: latent width " +
                                               std::to_string(z.cols()) +
                                               " vs codeword width " +
                                               std::to_string(codebook.cols()));
  }
  QuantizeResult out;
  out.z_q.resize(z.rows(), z.cols());
  out.indices.resize(z.rows());
  for (Eigen::Index t = 0; t < z.rows(); ++t) {
    int best = 0;
    double best_d = (z.row(t) - codebook.row(0)).squaredNorm();
    for (Eigen::Index k = 1; k < codebook.rows(); ++k) {
      const double d = (z.row(t) - codebook.row(k)).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(k);
      }
    }
    out.indices[t] = best;
    out.z_q.row(t) = codebook.row(best);
  }
  return out;
}

double CodebookPerplexity(const std::vector<long>& counts) {
  double total = 0.0;
  for (long c : counts) total += static_cast<double>(c);
  if (total <= 0.0) return 0.0;
  double h = 0.0;
  for (long c : counts) {
    if (c > 0) {
      const double p = c / total;
      h -= p * std::log(p);
    }
  }
  return std::exp(h);
}

StyleExtractorConfig StyleExtractorConfig::FromConfig(const Config& cfg) {
  StyleExtractorConfig c;
  c.d_style = cfg.GetInt("d_style", c.d_style);
  c.low_band = cfg.GetInt("low_band", c.low_band);
  c.channels1 = cfg.GetInt("extractor.channels1", c.channels1);
  c.channels2 = cfg.GetInt("extractor.channels2", c.channels2);
  c.res_blocks = cfg.GetInt("extractor.res_blocks", c.res_blocks);
  c.codebook_size = cfg.GetInt("extractor.codebook_size", c.codebook_size);
  c.beta = cfg.GetDouble("extractor.beta", c.beta);
  c.ema = cfg.GetBool("extractor.ema", c.ema);
  c.ema_decay = cfg.GetDouble("extractor.ema_decay", c.ema_decay);
  c.pre_quantization = cfg.GetBool("extractor.pre_quantization", c.pre_quantization);
  if (c.low_band % 4 != 0) {
    throw Error(ErrorCode::kBadConfig, "low_band must be a multiple of 4");
  }
  return c;
}

json StyleExtractorConfig::ToJson() const {
  return {{"d_style", d_style},       {"low_band", low_band},
          {"channels1", channels1},   {"channels2", channels2},
          {"res_blocks", res_blocks}, {"codebook_size", codebook_size},
          {"beta", beta},             {"ema", ema},
          {"ema_decay", ema_decay},   {"pre_quantization", pre_quantization}};
}

StyleExtractorConfig StyleExtractorConfig::FromJson(const json& j) {
  StyleExtractorConfig c;
  c.d_style = j.at("d_style");
  c.low_band = j.at("low_band");
  c.channels1 = j.at("channels1");
  c.channels2 = j.at("channels2");
  c.res_blocks = j.at("res_blocks");
  c.codebook_size = j.at("codebook_size");
  c.beta = j.at("beta");
  c.ema = j.at("ema");
  c.ema_decay = j.at("ema_decay");
  c.pre_quantization = j.at("pre_quantization");
  return c;
}

ExtractorInputs MakeExtractorInputs(const AcousticFeatures& feats,
                                    const ProsodyStats& stats,
                                    const std::string& speaker_id,
                                    const RowVector& text_style, int speaker_index) {
  const NormalizedProsody p = NormalizeProsody(feats, stats, speaker_id);
  ExtractorInputs in;
  in.mel20 = feats.mel20;
  in.f0 = p.f0;
  in.energy = p.energy;
  in.text_style = text_style;
  in.speaker = speaker_index;
  return in;
}

StyleExtractorModel::StyleExtractorModel(const StyleExtractorConfig& cfg,
                                         std::vector<std::string> speakers,
                                         uint64_t seed)
    : cfg_(cfg), speakers_(std::move(speakers)) {
  if (speakers_.empty()) speakers_.push_back("default");
  Rng rng(seed);
  const int c1 = cfg.channels1, c2 = cfg.channels2;
  w1_ = (cfg.low_band - 1) / 2 + 1;
  w2_ = (w1_ - 1) / 2 + 1;
  enc_conv1_ = Conv2d(params_, "extractor.enc.conv1", 1, c1, 2, rng);
  enc_bn1_ = BatchNorm(params_, "extractor.enc.bn1", c1);
  cond_f0_ = Linear(params_, "extractor.cond.f0", 1, c1, rng);
  cond_energy_ = Linear(params_, "extractor.cond.energy", 1, c1, rng);
  cond_text_ = Linear(params_, "extractor.cond.text", cfg.d_style, c1, rng);
  enc_conv2_ = Conv2d(params_, "extractor.enc.conv2", c1, c2, 2, rng);
  enc_bn2_ = BatchNorm(params_, "extractor.enc.bn2", c2);
  for (int r = 0; r < cfg.res_blocks; ++r) {
    const std::string n = "extractor.enc.res" + std::to_string(r);
    enc_res_.emplace_back(Conv2d(params_, n + ".conv_a", c2, c2, 1, rng),
                          Conv2d(params_, n + ".conv_b", c2, c2, 1, rng));
    enc_res_bn_.emplace_back(params_, n + ".bn", c2);
  }
  enc_out_ = Linear(params_, "extractor.enc.out", w2_ * c2, cfg.d_style, rng);

  const double k = static_cast<double>(cfg.codebook_size);
  Matrix codebook(cfg.codebook_size, cfg.d_style);
  for (Eigen::Index i = 0; i < codebook.size(); ++i) {
    codebook.data()[i] = rng.Uniform(-1.0 / k, 1.0 / k);
  }
  if (cfg.ema) {
    ema_sum_ = &params_.Add("extractor.codebook_ema.sum", codebook, false);
    ema_count_ = &params_.Add("extractor.codebook_ema.count",
                              Matrix::Ones(1, cfg.codebook_size), false);
  }
  codebook_ = &params_.Add("extractor.codebook", std::move(codebook), !cfg.ema);

  dec_in_ = Linear(params_, "extractor.dec.in", cfg.d_style, w2_ * c2, rng);
  speaker_table_ = Embedding(params_, "extractor.dec.speaker",
                             static_cast<int>(speakers_.size()), c2, rng);
  for (int r = 0; r < cfg.res_blocks; ++r) {
    const std::string n = "extractor.dec.res" + std::to_string(r);
    dec_res_.emplace_back(Conv2d(params_, n + ".conv_a", c2, c2, 1, rng),
                          Conv2d(params_, n + ".conv_b", c2, c2, 1, rng));
    dec_res_bn_.emplace_back(params_, n + ".bn", c2);
  }
  dec_conv1_ = Conv2d(params_, "extractor.dec.conv1", c2, c1, 1, rng);
  dec_bn1_ = BatchNorm(params_, "extractor.dec.bn1", c1);
  dec_conv2_ = Conv2d(params_, "extractor.dec.conv2", c1, c1, 1, rng);
  dec_bn2_ = BatchNorm(params_, "extractor.dec.bn2", c1);
  dec_out_ = Conv2d(params_, "extractor.dec.out", c1, 1, 1, rng);
  ResetUsage();
}

int StyleExtractorModel::SpeakerIndex(const std::string& speaker) const {
  auto it = std::find(speakers_.begin(), speakers_.end(), speaker);
  if (it == speakers_.end()) return 0;
  return static_cast<int>(it - speakers_.begin());
}

ag::Var StyleExtractorModel::Encode(Tape& tape, const ExtractorInputs& in) const {
  const Eigen::Index frames = in.mel20.rows();
  const int t = static_cast<int>(frames);
  if (in.mel20.cols() != cfg_.low_band || in.f0.size() != frames ||
      in.energy.size() != frames || in.text_style.size() != cfg_.d_style) {
    throw Error(ErrorCode::kShapeMismatch,
                "extractor inputs: mel20 " + std::to_string(frames) + "x" +
                    std::to_string(in.mel20.cols()) + ", f0 " +
                    std::to_string(in.f0.size()) + ", energy " +
                    std::to_string(in.energy.size()) + ", style " +
                    std::to_string(in.text_style.size()));
  }
  if (frames == 0) throw Error(ErrorCode::kShapeMismatch, "extractor: zero frames");
  ag::Var x = ag::Constant(Eigen::Map<const Matrix>(in.mel20.data(),
                                                    frames * cfg_.low_band, 1));
  x = ag::Relu(enc_bn1_(tape, enc_conv1_(tape, x, t, cfg_.low_band)));

  ag::Var f0 = ag::Constant(Eigen::Map<const Matrix>(in.f0.data(), frames, 1));
  ag::Var en = ag::Constant(Eigen::Map<const Matrix>(in.energy.data(), frames, 1));
  ag::Var style = ag::Constant(Matrix(in.text_style));
  ag::Var cond = ag::Add(ag::Add(cond_f0_(tape, f0), cond_energy_(tape, en)),
                         ag::BroadcastRows(cond_text_(tape, style), frames));
  x = ag::Add(x, ag::RepeatRows(cond, std::vector<int>(t, w1_)));

  x = ag::Relu(enc_bn2_(tape, enc_conv2_(tape, x, t, w1_)));
  for (size_t r = 0; r < enc_res_.size(); ++r) {
    ag::Var h = enc_res_[r].first(tape, ag::Relu(x), t, w2_);
    h = enc_res_[r].second(tape, ag::Relu(enc_res_bn_[r](tape, h)), t, w2_);
    x = ag::Add(x, h);
  }
  x = ag::Reshape(ag::Relu(x), frames, Eigen::Index(w2_) * cfg_.channels2);
  return enc_out_(tape, x);
}

ag::Var StyleExtractorModel::Decode(Tape& tape, const ag::Var& zq, int frames,
                                    int speaker) const {
  ag::Var x = ag::Reshape(dec_in_(tape, zq), Eigen::Index(frames) * w2_,
                          cfg_.channels2);
  x = ag::Add(x, speaker_table_(tape, std::vector<int>(size_t(frames) * w2_, speaker)));
  for (size_t r = 0; r < dec_res_.size(); ++r) {
    ag::Var h = dec_res_[r].first(tape, ag::Relu(x), frames, w2_);
    h = dec_res_[r].second(tape, ag::Relu(dec_res_bn_[r](tape, h)), frames, w2_);
    x = ag::Add(x, h);
  }
  x = ag::UpsampleWidth(ag::Relu(x), frames, w2_, 2);
  x = ag::Relu(dec_bn1_(tape, dec_conv1_(tape, x, frames, 2 * w2_)));
  x = ag::UpsampleWidth(x, frames, 2 * w2_, 2);
  x = ag::Relu(dec_bn2_(tape, dec_conv2_(tape, x, frames, 4 * w2_)));
  x = dec_out_(tape, x, frames, 4 * w2_);
  return ag::Reshape(x, frames, 4 * w2_);
}

ExtractorForward StyleExtractorModel::Forward(Tape& tape, const ExtractorInputs& in,
                                              bool decode) {
  ExtractorForward out;
  out.z = Encode(tape, in);
  const QuantizeResult q = Quantize(codebook_->value, out.z.value());
  out.indices = q.indices;
  if (tape.training()) {
    for (int i : q.indices) ++usage_[i];
  }
  out.codewords = ag::GatherRows(tape.Param(*codebook_), q.indices);
  out.z_q = ag::StraightThrough(out.z, out.codewords);
  if (decode) {
    if (in.speaker < 0 || in.speaker >= static_cast<int>(speakers_.size())) {
      throw Error(ErrorCode::kShapeMismatch, "speaker index out of range");
    }
    out.recon = Decode(tape, out.z_q, static_cast<int>(in.mel20.rows()), in.speaker);
  }
  return out;
}

VqLosses StyleExtractorModel::Loss(const ExtractorForward& out,
                                   const Matrix& mel20) const {
  VqLosses l;
  l.recon = ag::MseLoss(out.recon, ag::Constant(mel20));
  l.vq = ag::MseLoss(ag::Detach(out.z), out.codewords);
  l.commit = ag::MseLoss(out.z, ag::Detach(out.codewords));
  l.total = ag::Add(ag::Add(l.recon, l.vq), ag::Scale(l.commit, cfg_.beta));
  return l;
}

Matrix StyleExtractorModel::ExtractStyle(const Matrix& mel20, const Vector& f0,
                                         const Vector& energy,
                                         const RowVector& text_style) {
  ++g_extract_calls;
  ExtractorInputs in;
  in.mel20 = mel20.leftCols(std::min<Eigen::Index>(mel20.cols(), cfg_.low_band));
  in.f0 = f0;
  in.energy = energy;
  in.text_style = text_style;
  Tape tape(false);
  ExtractorForward out = Forward(tape, in, false);
  return cfg_.pre_quantization ? out.z.value() : out.z_q.value();
}

long StyleExtractorModel::ExtractCallCount() { return g_extract_calls.load(); }

void StyleExtractorModel::EmaUpdate(
    const std::vector<std::pair<Matrix, std::vector<int>>>& batch) {
  if (!cfg_.ema || codebook_->frozen) return;
  const int k = cfg_.codebook_size;
  const double decay = cfg_.ema_decay;
  Vector counts = Vector::Zero(k);
  Matrix sums = Matrix::Zero(k, cfg_.d_style);
  for (const auto& [z, idx] : batch) {
    for (size_t t = 0; t < idx.size(); ++t) {
      counts[idx[t]] += 1.0;
      sums.row(idx[t]) += z.row(t);
    }
  }
  Matrix& n = ema_count_->value;
  Matrix& m = ema_sum_->value;
  for (int j = 0; j < k; ++j) {
    n(0, j) = decay * n(0, j) + (1.0 - decay) * counts[j];
    m.row(j) = decay * m.row(j) + (1.0 - decay) * sums.row(j);
  }
  const double total = n.sum();
  for (int j = 0; j < k; ++j) {
    // Laplace smoothing keeps rarely used codes finite.
    const double smoothed = (n(0, j) + 1e-5) / (total + k * 1e-5) * total;
    codebook_->value.row(j) = m.row(j) / smoothed;
  }
}

void StyleExtractorModel::Save(const std::string& path) const {
  Checkpoint ck;
  ck.kind = "style_extractor";
  ck.meta["config"] = cfg_.ToJson();
  ck.meta["speakers"] = speakers_;
  ck.tensors = params_.Export();
  ck.Save(path);
}

StyleExtractorModel StyleExtractorModel::Load(const std::string& path) {
  const Checkpoint ck = Checkpoint::Load(path, "style_extractor");
  StyleExtractorModel m(StyleExtractorConfig::FromJson(ck.meta.at("config")),
                        ck.meta.at("speakers").get<std::vector<std::string>>(), 0);
  m.params_.Load(ck.tensors);
  return m;
}

ExtractorTrainConfig ExtractorTrainConfig::FromConfig(const Config& cfg) {
  ExtractorTrainConfig c;
  c.batch_size = cfg.GetInt("extractor.batch_size", cfg.GetInt("batch_size", c.batch_size));
  c.epochs = cfg.GetInt("extractor.epochs", c.epochs);
  c.learning_rate = cfg.GetDouble("extractor.learning_rate", c.learning_rate);
  c.warmup_steps = cfg.GetInt("extractor.warmup_steps", cfg.GetInt("warmup_steps", c.warmup_steps));
  c.grad_clip = cfg.GetDouble("extractor.grad_clip", c.grad_clip);
  c.segment_frames = cfg.GetInt("extractor.segment_frames", c.segment_frames);
  c.restart_dead_codes = cfg.GetBool("extractor.restart_dead_codes", c.restart_dead_codes);
  c.seed = static_cast<uint64_t>(cfg.GetInt("seed", static_cast<int>(c.seed)));
  return c;
}

std::vector<ExtractorInputs> LoadExtractorInputs(
    const Manifest& manifest, const std::vector<const UtteranceRecord*>& records,
    const ProsodyStats& stats, const TextStyleModel& text_model,
    const StyleExtractorModel& extractor, int low_band) {
  std::vector<ExtractorInputs> out;
  out.reserve(records.size());
  for (const UtteranceRecord* r : records) {
    const AcousticFeatures f = ReadFeatureCache(manifest.FeaturePath(r->id), low_band);
    out.push_back(MakeExtractorInputs(f, stats, r->speaker_id,
                                      text_model.EncodeStyle(r->text),
                                      extractor.SpeakerIndex(r->speaker_id)));
  }
  return out;
}

namespace {

ExtractorInputs Crop(const ExtractorInputs& in, int frames, Rng& rng) {
  const Eigen::Index t = in.mel20.rows();
  if (frames <= 0 || t <= frames) return in;
  const Eigen::Index start = static_cast<Eigen::Index>(rng.Index(t - frames + 1));
  ExtractorInputs c;
  c.mel20 = in.mel20.middleRows(start, frames);
  c.f0 = in.f0.segment(start, frames);
  c.energy = in.energy.segment(start, frames);
  c.text_style = in.text_style;
  c.speaker = in.speaker;
  return c;
}

}  // namespace

ExtractorPretrainResult PretrainStyleExtractor(
    StyleExtractorModel& model, const Manifest& manifest,
    const TextStyleModel& text_model, const ExtractorTrainConfig& cfg,
    const std::function<void(const ExtractorEpoch&)>& on_epoch,
    const TrainControl& control) {
  if (!text_model.frozen()) {
    throw Error(ErrorCode::kFrozenContractViolation,
                "text style encoder must be frozen while training the extractor");
  }
  const auto train_records = manifest.Split("train");
  if (train_records.empty()) throw Error(ErrorCode::kEmptyCorpus, "no training records");
  const ProsodyStats stats = ReadStats(manifest.StatsPath());
  const int low_band = model.config().low_band;
  const auto train = LoadExtractorInputs(manifest, train_records, stats, text_model,
                                         model, low_band);
  const auto val = LoadExtractorInputs(manifest, manifest.Split("val"), stats,
                                       text_model, model, low_band);

  AdamConfig acfg;
  acfg.learning_rate = cfg.learning_rate;
  acfg.warmup_steps = cfg.warmup_steps;
  acfg.grad_clip = cfg.grad_clip;
  Adam adam(model.params(), acfg);
  const long done = control.Restore(adam);

  ExtractorPretrainResult result;
  const int bs = std::max(1, cfg.batch_size);
  const long per_epoch = static_cast<long>((train.size() + bs - 1) / bs);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const long first = epoch * per_epoch;
    if (first + per_epoch <= done) continue;
    model.ResetUsage();
    Rng order_rng(MixSeed(cfg.seed, 2000 + static_cast<uint64_t>(epoch)));
    const uint64_t crop_seed = MixSeed(cfg.seed, 3000 + static_cast<uint64_t>(epoch));
    const std::vector<size_t> order = order_rng.Permutation(train.size());
    ExtractorEpoch rec;
    rec.epoch = epoch;
    int batches = 0;
    Matrix last_z;
    for (size_t s = 0; s < order.size(); s += bs) {
      const long global = first + static_cast<long>(s / bs);
      if (global < done) continue;
      const size_t e = std::min(order.size(), s + bs);
      const double w = 1.0 / static_cast<double>(e - s);
      Tape tape(true);
      ag::Var loss;
      std::vector<std::pair<Matrix, std::vector<int>>> ema_batch;
      double recon = 0, vq = 0, commit = 0;
      for (size_t i = s; i < e; ++i) {
        Rng crop_rng(MixSeed(crop_seed, i));
        const ExtractorInputs in = Crop(train[order[i]], cfg.segment_frames, crop_rng);
        ExtractorForward out = model.Forward(tape, in, true);
        VqLosses l = model.Loss(out, in.mel20);
        recon += w * l.recon.scalar();
        vq += w * l.vq.scalar();
        commit += w * l.commit.scalar();
        ag::Var term = ag::Scale(l.total, w);
        loss = loss.defined() ? ag::Add(loss, term) : term;
        if (model.config().ema) ema_batch.emplace_back(out.z.value(), out.indices);
        last_z = out.z.value();
      }
      if (global == 0) result.initial_recon = recon;
      if (!std::isfinite(loss.scalar())) {
        throw Error(ErrorCode::kNumericalError, "extractor loss is not finite");
      }
      ag::Backward(loss);
      GradientBuffer grads;
      grads.Add(tape.Gradients());
      adam.Step(grads);
      model.EmaUpdate(ema_batch);
      rec.recon += recon;
      rec.vq += vq;
      rec.commit += commit;
      rec.total += loss.scalar();
      ++batches;
      if (control.on_step) {
        control.on_step({adam.step(), epoch,
                         {{"recon", recon}, {"vq", vq}, {"commit", commit},
                          {"total", loss.scalar()}}});
      }
      if (control.Reached(adam.step()) && e < order.size()) {
        if (control.on_save) control.on_save(adam, epoch, false);
        result.stopped = true;
        return result;
      }
    }
    rec.recon /= batches;
    rec.vq /= batches;
    rec.commit /= batches;
    rec.total /= batches;
    rec.step = adam.step();
    rec.perplexity = CodebookPerplexity(model.usage());
    for (long c : model.usage()) rec.dead_codes += c == 0;
    if (cfg.restart_dead_codes && !model.frozen() && last_z.rows() > 0) {
      Rng restart(MixSeed(cfg.seed, 4000 + static_cast<uint64_t>(epoch)));
      for (size_t j = 0; j < model.usage().size(); ++j) {
        if (model.usage()[j] > 0) continue;
        const Eigen::Index row = static_cast<Eigen::Index>(restart.Index(last_z.rows()));
        for (Eigen::Index c = 0; c < last_z.cols(); ++c) {
          model.mutable_codebook()(j, c) = last_z(row, c) + 0.01 * restart.Normal();
        }
      }
    }
    if (!val.empty()) {
      double acc = 0.0;
      for (const ExtractorInputs& in : val) {
        Tape tape(false);
        ExtractorForward out = model.Forward(tape, in, true);
        acc += model.Loss(out, in.mel20).recon.scalar();
      }
      rec.val_recon = acc / val.size();
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

int ExportCodes(StyleExtractorModel& model, const Manifest& manifest,
                const TextStyleModel& text_model, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  const ProsodyStats stats = ReadStats(manifest.StatsPath());
  const auto records = manifest.Split("");
  const auto inputs =
      LoadExtractorInputs(manifest, records, stats, text_model, model, model.config().low_band);
  for (size_t i = 0; i < records.size(); ++i) {
    Tape tape(false);
    const ExtractorForward out = model.Forward(tape, inputs[i], false);
    const nlohmann::json j = {{"id", records[i]->id},
                              {"frames", out.indices.size()},
                              {"indices", out.indices}};
    const std::string path = out_dir + "/" + records[i]->id + ".json";
    std::ofstream f(path);
    if (!f) throw Error(ErrorCode::kIoError, "cannot write " + path);
    f << j.dump() << '\n';
  }
  return static_cast<int>(records.size());
}

}  // namespace duopath
