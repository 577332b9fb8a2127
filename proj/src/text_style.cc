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

#include "duopath/text_style.h"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

namespace duopath {

using nlohmann::json;

namespace {

bool IsAsciiPunct(unsigned char c) { return c < 128 && std::ispunct(c); }

std::vector<std::string> SplitWhitespace(const std::string& text) {
  std::istringstream ss(text);
  std::vector<std::string> out;
  std::string w;
  while (ss >> w) out.push_back(w);
  return out;
}

// [begin, end) of the word core inside `word` once edge punctuation is cut.
std::pair<size_t, size_t> CoreSpan(const std::string& word) {
  size_t b = 0, e = word.size();
  while (b < e && IsAsciiPunct(word[b])) ++b;
  while (e > b && IsAsciiPunct(word[e - 1])) --e;
  return {b, e};
}

}  // namespace

std::string NormalizeWord(const std::string& word) {
  const auto [b, e] = CoreSpan(word);
  std::string out = word.substr(b, e - b);
  for (char& c : out) {
    if (static_cast<unsigned char>(c) < 128) c = static_cast<char>(std::tolower(c));
  }
  return out;
}

void Tokenizer::Insert(const std::string& token) {
  if (index_.count(token)) return;
  index_[token] = static_cast<int>(tokens_.size());
  tokens_.push_back(token);
}

Tokenizer Tokenizer::Build(const std::vector<std::string>& corpus, int min_count) {
  std::map<std::string, int> counts;
  std::set<std::string> chars;
  for (const std::string& line : corpus) {
    for (const std::string& raw : SplitWhitespace(line)) {
      const std::string w = NormalizeWord(raw);
      if (w.empty()) continue;
      ++counts[w];
      for (char c : w) chars.insert(std::string("#") + c);
    }
  }
  Tokenizer tok;
  tok.index_["<unk>"] = 0;
  for (const auto& [w, n] : counts) {
    if (n >= min_count) tok.Insert(w);
  }
  for (const std::string& c : chars) tok.Insert(c);
  return tok;
}

Tokenizer Tokenizer::FromJson(const json& j) {
  Tokenizer tok;
  tok.tokens_.clear();
  tok.index_.clear();
  for (const auto& t : j.get<std::vector<std::string>>()) {
    tok.index_[t] = static_cast<int>(tok.tokens_.size());
    tok.tokens_.push_back(t);
  }
  if (tok.tokens_.empty() || tok.tokens_[0] != "<unk>") {
    throw Error(ErrorCode::kBadCheckpoint, "tokenizer vocabulary lacks <unk>");
  }
  return tok;
}

json Tokenizer::ToJson() const { return tokens_; }

std::vector<int> Tokenizer::Encode(const std::string& text) const {
  std::vector<int> ids;
  for (const std::string& raw : SplitWhitespace(text)) {
    const std::string w = NormalizeWord(raw);
    if (w.empty()) continue;
    auto it = index_.find(w);
    if (it != index_.end()) {
      ids.push_back(it->second);
      continue;
    }
    for (char c : w) {
      auto ct = index_.find(std::string("#") + c);
      ids.push_back(ct == index_.end() ? 0 : ct->second);
    }
  }
  return ids;
}

EmotionLexicon::EmotionLexicon(
    const std::map<std::string, std::vector<std::string>>& entries) {
  // Union-find over every word mentioned.
  std::map<std::string, std::string> parent;
  std::function<std::string(const std::string&)> find = [&](const std::string& w) {
    std::string& p = parent[w];
    if (p.empty() || p == w) {
      p = w;
      return w;
    }
    p = find(p);
    return p;
  };
  auto unite = [&](const std::string& a, const std::string& b) {
    const std::string ra = find(a), rb = find(b);
    if (ra != rb) parent[std::max(ra, rb)] = std::min(ra, rb);
  };
  for (const auto& [word, subs] : entries) {
    const std::string w = NormalizeWord(word);
    if (w.empty()) throw Error(ErrorCode::kBadLexicon, "empty lexicon word");
    find(w);
    for (const std::string& s : subs) {
      const std::string n = NormalizeWord(s);
      if (n.empty()) throw Error(ErrorCode::kBadLexicon, "empty substitute for " + w);
      unite(w, n);
    }
  }
  std::map<std::string, std::vector<std::string>> classes;
  for (auto& [w, p] : parent) {
    (void)p;
    classes[find(w)].push_back(w);
  }
  for (const auto& [root, members] : classes) {
    (void)root;
    for (const std::string& w : members) {
      auto& out = subs_[w];
      for (const std::string& o : members) {
        if (o != w) out.push_back(o);
      }
    }
  }
}

EmotionLexicon EmotionLexicon::FromJson(const json& j) {
  std::map<std::string, std::vector<std::string>> entries;
  try {
    if (j.contains("groups")) {
      for (const auto& [name, words] : j["groups"].items()) {
        (void)name;
        const auto list = words.get<std::vector<std::string>>();
        if (list.empty()) continue;
        auto& e = entries[list.front()];
        e.insert(e.end(), list.begin() + 1, list.end());
      }
    } else {
      for (const auto& [word, subs] : j.items()) {
        entries[word] = subs.get<std::vector<std::string>>();
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kBadLexicon, e.what());
  }
  return EmotionLexicon(entries);
}

EmotionLexicon EmotionLexicon::FromFile(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open lexicon " + path);
  try {
    return FromJson(json::parse(in));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kBadLexicon, path + ": " + e.what());
  }
}

const std::vector<std::string>& EmotionLexicon::Substitutes(
    const std::string& word) const {
  static const std::vector<std::string> kNone;
  auto it = subs_.find(word);
  return it == subs_.end() ? kNone : it->second;
}

std::vector<std::string> EmotionLexicon::Words() const {
  std::vector<std::string> out;
  for (const auto& [w, s] : subs_) {
    (void)s;
    out.push_back(w);
  }
  return out;
}

Augmented AugmentPositive(const EmotionLexicon& lexicon, const std::string& text,
                          uint64_t seed) {
  // Word spans in the original string so spacing survives the edit.
  std::vector<std::pair<size_t, size_t>> spans;
  size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    const size_t b = i;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i > b) spans.emplace_back(b, i);
  }
  std::vector<std::pair<size_t, size_t>> candidates;
  for (const auto& [b, e] : spans) {
    const std::string word = text.substr(b, e - b);
    if (!lexicon.Substitutes(NormalizeWord(word)).empty()) {
      const auto [cb, ce] = CoreSpan(word);
      candidates.emplace_back(b + cb, b + ce);
    }
  }
  if (candidates.empty()) return {text, false};
  Rng rng(seed);
  const auto [b, e] = candidates[rng.Index(candidates.size())];
  const std::string core = text.substr(b, e - b);
  const auto& subs = lexicon.Substitutes(NormalizeWord(core));
  std::string sub = subs[rng.Index(subs.size())];
  if (!core.empty() && std::isupper(static_cast<unsigned char>(core[0]))) {
    sub[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(sub[0])));
  }
  return {text.substr(0, b) + sub + text.substr(e), true};
}

TextStyleConfig TextStyleConfig::FromConfig(const Config& cfg) {
  TextStyleConfig c;
  c.d_model = cfg.GetInt("text_style.d_model", c.d_model);
  c.layers = cfg.GetInt("text_style.layers", c.layers);
  c.heads = cfg.GetInt("text_style.heads", c.heads);
  c.filter = cfg.GetInt("text_style.filter", c.filter);
  c.kernel = cfg.GetInt("text_style.kernel", c.kernel);
  c.d_style = cfg.GetInt("d_style", c.d_style);
  c.clusters = cfg.GetInt("text_style.clusters", c.clusters);
  c.max_positions = cfg.GetInt("text_style.max_positions", c.max_positions);
  c.min_count = cfg.GetInt("text_style.min_count", c.min_count);
  if (c.d_model % c.heads != 0) {
    throw Error(ErrorCode::kBadConfig, "text_style.d_model must divide by heads");
  }
  if (c.clusters < 1) throw Error(ErrorCode::kBadConfig, "text_style.clusters < 1");
  return c;
}

json TextStyleConfig::ToJson() const {
  return {{"d_model", d_model}, {"layers", layers},
          {"heads", heads},     {"filter", filter},
          {"kernel", kernel},   {"d_style", d_style},
          {"clusters", clusters}, {"max_positions", max_positions},
          {"min_count", min_count}};
}

TextStyleConfig TextStyleConfig::FromJson(const json& j) {
  TextStyleConfig c;
  c.d_model = j.at("d_model");
  c.layers = j.at("layers");
  c.heads = j.at("heads");
  c.filter = j.at("filter");
  c.kernel = j.at("kernel");
  c.d_style = j.at("d_style");
  c.clusters = j.at("clusters");
  c.max_positions = j.at("max_positions");
  c.min_count = j.value("min_count", 1);
  return c;
}

TextStyleModel::TextStyleModel(const TextStyleConfig& cfg, Tokenizer tokenizer,
                               uint64_t seed)
    : cfg_(cfg), tokenizer_(std::move(tokenizer)) {
  Rng rng(seed);
  embed_ = Embedding(params_, "text_style.embed", tokenizer_.size(), cfg.d_model, rng);
  for (int l = 0; l < cfg.layers; ++l) {
    blocks_.emplace_back(params_, "text_style.block" + std::to_string(l),
                         cfg.d_model, cfg.heads, cfg.filter, cfg.kernel, rng);
  }
  projection_ = Linear(params_, "text_style.projection", cfg.d_model, cfg.d_style, rng);
  decoder_ = Linear(params_, "text_style.decoder", cfg.d_style, cfg.d_model, rng);
  Matrix null(1, cfg.d_style);
  for (Eigen::Index i = 0; i < null.size(); ++i) null.data()[i] = 0.1 * rng.Normal();
  null_ = &params_.Add("text_style.null", std::move(null));
  centroids_ = &params_.Add("text_style.centroids",
                            Matrix::Zero(cfg.clusters, cfg.d_style));
  positions_ = SinusoidalPositions(cfg.max_positions, cfg.d_model);
}

ag::Var TextStyleModel::Forward(Tape& tape, const std::string& text,
                                ag::Var* pooled) const {
  std::vector<int> ids = tokenizer_.Encode(text);
  if (ids.empty()) {
    if (pooled) *pooled = ag::Var();
    return tape.Param(*null_);
  }
  if (static_cast<int>(ids.size()) > cfg_.max_positions) ids.resize(cfg_.max_positions);
  const Eigen::Index n = static_cast<Eigen::Index>(ids.size());
  ag::Var h = ag::AddConstant(embed_(tape, ids), positions_.topRows(n));
  for (const FftBlock& b : blocks_) h = b(tape, h);
  ag::Var pool = ag::MeanRows(h);
  if (pooled) *pooled = pool;
  return projection_(tape, pool);
}

ag::Var TextStyleModel::Reconstruct(Tape& tape, const ag::Var& style) const {
  return decoder_(tape, style);
}

RowVector TextStyleModel::EncodeStyle(const std::string& text) const {
  Tape tape(false);
  return Forward(tape, text).value().row(0);
}

Matrix TextStyleModel::EncodeContext(const std::vector<std::string>& window) const {
  if (window.size() % 2 != 1) {
    throw Error(ErrorCode::kBadWindow,
                "context window has even length " + std::to_string(window.size()));
  }
  Matrix out(static_cast<Eigen::Index>(window.size()), cfg_.d_style);
  for (size_t i = 0; i < window.size(); ++i) out.row(i) = EncodeStyle(window[i]);
  return out;
}

Checkpoint TextStyleModel::ToCheckpoint() const {
  Checkpoint ck;
  ck.kind = "text_style";
  ck.meta["config"] = cfg_.ToJson();
  ck.meta["vocab"] = tokenizer_.ToJson();
  ck.tensors = params_.Export();
  return ck;
}

void TextStyleModel::Save(const std::string& path) const { ToCheckpoint().Save(path); }

TextStyleModel TextStyleModel::Load(const std::string& path) {
  const Checkpoint ck = Checkpoint::Load(path, "text_style");
  TextStyleModel model(TextStyleConfig::FromJson(ck.meta.at("config")),
                       Tokenizer::FromJson(ck.meta.at("vocab")), 0);
  model.params_.Load(ck.tensors);
  return model;
}

ag::Var ContrastiveLoss(const ag::Var& anchors, const ag::Var& positives,
                        double temperature) {
  const Eigen::Index b = anchors.rows();
  if (b < 2) {
    throw Error(ErrorCode::kContrastiveBatchTooSmall,
                "contrastive batch needs at least 2 items, got " + std::to_string(b));
  }
  ag::Var z = ag::RowL2Normalize(ag::VCat({anchors, positives}));
  ag::Var sim = ag::Scale(ag::MatMulNT(z, z), 1.0 / temperature);
  Matrix mask = Matrix::Zero(2 * b, 2 * b);
  mask.diagonal().setConstant(-1e9);
  ag::Var logp = ag::LogSoftmaxRows(ag::AddConstant(sim, mask));
  std::vector<int> target(2 * b);
  for (Eigen::Index i = 0; i < b; ++i) {
    target[i] = static_cast<int>(i + b);
    target[i + b] = static_cast<int>(i);
  }
  return ag::Scale(ag::Mean(ag::PickPerRow(logp, target)), -1.0);
}

ag::Var ClusteringLoss(const ag::Var& z, const ag::Var& centroids) {
  ag::Var q = ag::RowNormalizeSum(ag::InvOnePlus(ag::PairwiseSqDist(z, centroids)));
  const Matrix& Q = q.value();
  const RowVector freq = Q.colwise().sum();
  Matrix P = Q.array().square().rowwise() / freq.array();
  P = P.array().colwise() / P.rowwise().sum().array();
  const double n = static_cast<double>(Q.rows());
  Matrix entropy(1, 1);
  entropy(0, 0) = (P.array() * P.array().max(1e-300).log()).sum() / n;
  ag::Var cross = ag::Scale(ag::Sum(ag::Mul(ag::Constant(P), ag::Log(q))), -1.0 / n);
  return ag::AddConstant(cross, entropy);
}

TextStyleTrainConfig TextStyleTrainConfig::FromConfig(const Config& cfg) {
  TextStyleTrainConfig c;
  c.batch_size = cfg.GetInt("text_style.batch_size", cfg.GetInt("batch_size", c.batch_size));
  c.epochs_contrastive = cfg.GetInt("text_style.epochs_contrastive", c.epochs_contrastive);
  c.epochs_cluster = cfg.GetInt("text_style.epochs_cluster", c.epochs_cluster);
  c.learning_rate = cfg.GetDouble("text_style.learning_rate", c.learning_rate);
  c.warmup_steps = cfg.GetInt("text_style.warmup_steps", cfg.GetInt("warmup_steps", c.warmup_steps));
  c.grad_clip = cfg.GetDouble("text_style.grad_clip", c.grad_clip);
  c.temperature = cfg.GetDouble("text_style.temperature", c.temperature);
  c.cluster_weight = cfg.GetDouble("text_style.cluster_weight", c.cluster_weight);
  c.recon_weight = cfg.GetDouble("text_style.recon_weight", c.recon_weight);
  c.seed = static_cast<uint64_t>(cfg.GetInt("seed", static_cast<int>(c.seed)));
  return c;
}

Matrix KMeans(const Matrix& points, int k, int iterations, uint64_t seed) {
  const Eigen::Index n = points.rows();
  if (n == 0) throw Error(ErrorCode::kEmptyCorpus, "k-means on no points");
  Matrix centers(k, points.cols());
  Rng rng(seed);
  centers.row(0) = points.row(rng.Index(n));
  Vector best = Vector::Constant(n, std::numeric_limits<double>::infinity());
  for (int c = 1; c < k; ++c) {
    Eigen::Index far = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      best[i] = std::min(best[i], (points.row(i) - centers.row(c - 1)).squaredNorm());
      if (best[i] > best[far]) far = i;
    }
    centers.row(c) = points.row(far);
  }
  std::vector<int> assign(n, 0);
  for (int it = 0; it < iterations; ++it) {
    for (Eigen::Index i = 0; i < n; ++i) {
      double d = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        const double dc = (points.row(i) - centers.row(c)).squaredNorm();
        if (dc < d) {
          d = dc;
          assign[i] = c;
        }
      }
    }
    Matrix sums = Matrix::Zero(k, points.cols());
    std::vector<int> counts(k, 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(assign[i]) += points.row(i);
      ++counts[assign[i]];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[c] > 0) centers.row(c) = sums.row(c) / counts[c];
    }
  }
  return centers;
}

namespace {

std::vector<std::vector<int>> EpochBatches(size_t n, int batch_size, uint64_t seed,
                                           int epoch) {
  Rng rng(MixSeed(seed, 1000 + static_cast<uint64_t>(epoch)));
  const std::vector<size_t> order = rng.Permutation(n);
  std::vector<std::vector<int>> batches;
  for (size_t s = 0; s < n; s += batch_size) {
    std::vector<int> b;
    for (size_t i = s; i < std::min(n, s + batch_size); ++i) {
      b.push_back(static_cast<int>(order[i]));
    }
    // A trailing single item has no in-batch negatives.
    if (b.size() >= 2) batches.push_back(std::move(b));
  }
  return batches;
}

}  // namespace

TextStylePretrainResult PretrainStyleEncoder(
    TextStyleModel& model, const std::vector<std::string>& corpus,
    const EmotionLexicon& lexicon, const TextStyleTrainConfig& cfg,
    const std::function<void(const TextStyleEpoch&)>& on_epoch,
    const TrainControl& control) {
  if (corpus.empty()) throw Error(ErrorCode::kEmptyCorpus, "no pre-training text");
  if (cfg.batch_size < 2 || corpus.size() < 2) {
    throw Error(ErrorCode::kContrastiveBatchTooSmall,
                "contrastive pre-training needs batches of at least 2 sentences");
  }
  AdamConfig acfg;
  acfg.learning_rate = cfg.learning_rate;
  acfg.warmup_steps = cfg.warmup_steps;
  acfg.grad_clip = cfg.grad_clip;
  Adam adam(model.params(), acfg);
  const long done = control.Restore(adam);

  auto positive_of = [&](int epoch, int idx) {
    const uint64_t s = MixSeed(cfg.seed, (static_cast<uint64_t>(epoch) << 32) |
                                             static_cast<uint64_t>(idx));
    return AugmentPositive(lexicon, corpus[idx], s).text;
  };

  TextStylePretrainResult result;
  if (done == 0) {
    const auto batches = EpochBatches(corpus.size(), cfg.batch_size, cfg.seed, 0);
    double acc = 0.0;
    for (const auto& b : batches) {
      Tape tape(false);
      std::vector<ag::Var> a, p;
      for (int i : b) {
        a.push_back(model.Forward(tape, corpus[i]));
        p.push_back(model.Forward(tape, positive_of(0, i)));
      }
      acc += ContrastiveLoss(ag::VCat(a), ag::VCat(p), cfg.temperature).scalar();
    }
    result.initial_contrastive = acc / batches.size();
  }

  const int total_epochs = cfg.epochs_contrastive + cfg.epochs_cluster;
  const long per_epoch =
      static_cast<long>(EpochBatches(corpus.size(), cfg.batch_size, cfg.seed, 0).size());
  for (int epoch = 0; epoch < total_epochs; ++epoch) {
    const long first = epoch * per_epoch;
    if (first + per_epoch <= done) continue;
    const int phase = epoch < cfg.epochs_contrastive ? 1 : 2;
    if (phase == 2 && epoch == cfg.epochs_contrastive && first >= done) {
      Matrix emb(static_cast<Eigen::Index>(corpus.size()), model.d_style());
      for (size_t i = 0; i < corpus.size(); ++i) emb.row(i) = model.EncodeStyle(corpus[i]);
      model.centroids().value =
          KMeans(emb, model.config().clusters, 20, MixSeed(cfg.seed, 77));
    }
    TextStyleEpoch rec;
    rec.phase = phase;
    rec.epoch = epoch;
    const auto batches = EpochBatches(corpus.size(), cfg.batch_size, cfg.seed, epoch);
    int ran = 0;
    for (size_t bi = 0; bi < batches.size(); ++bi) {
      if (first + static_cast<long>(bi) < done) continue;
      const auto& b = batches[bi];
      Tape tape(true);
      std::vector<ag::Var> a, p, pooled;
      for (int i : b) {
        ag::Var pool;
        a.push_back(model.Forward(tape, corpus[i], &pool));
        p.push_back(model.Forward(tape, positive_of(epoch, i)));
        if (pool.defined()) pooled.push_back(pool);
      }
      ag::Var anchors = ag::VCat(a);
      ag::Var loss = ContrastiveLoss(anchors, ag::VCat(p), cfg.temperature);
      StepRecord srec;
      srec.epoch = epoch;
      srec.losses.emplace_back("contrastive", loss.scalar());
      rec.contrastive += loss.scalar();
      if (phase == 2) {
        ag::Var kl = ClusteringLoss(anchors, tape.Param(model.centroids()));
        rec.cluster += kl.scalar();
        srec.losses.emplace_back("cluster", kl.scalar());
        loss = ag::Add(loss, ag::Scale(kl, cfg.cluster_weight));
        std::vector<ag::Var> styled;
        for (size_t j = 0; j < b.size(); ++j) {
          if (tape.Lookup(a[j])) continue;  // null embedding has no pooled output
          styled.push_back(a[j]);
        }
        if (!styled.empty() && styled.size() == pooled.size()) {
          ag::Var recon = ag::MseLoss(model.Reconstruct(tape, ag::VCat(styled)),
                                      ag::Detach(ag::VCat(pooled)));
          rec.recon += recon.scalar();
          srec.losses.emplace_back("recon", recon.scalar());
          loss = ag::Add(loss, ag::Scale(recon, cfg.recon_weight));
        }
      }
      rec.total += loss.scalar();
      if (!std::isfinite(loss.scalar())) {
        throw Error(ErrorCode::kNumericalError, "text style loss is not finite");
      }
      ag::Backward(loss);
      GradientBuffer grads;
      grads.Add(tape.Gradients());
      adam.Step(grads);
      ++ran;
      srec.step = adam.step();
      srec.losses.emplace_back("total", loss.scalar());
      if (control.on_step) control.on_step(srec);
      if (control.Reached(adam.step()) && bi + 1 < batches.size()) {
        if (control.on_save) control.on_save(adam, epoch, false);
        result.stopped = true;
        return result;
      }
    }
    const double nb = static_cast<double>(ran);
    rec.contrastive /= nb;
    rec.cluster /= nb;
    rec.recon /= nb;
    rec.total /= nb;
    rec.step = adam.step();
    result.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (control.on_save) control.on_save(adam, epoch, true);
    if (control.Reached(adam.step()) && epoch + 1 < total_epochs) {
      result.stopped = true;
      return result;
    }
  }
  return result;
}

std::vector<std::string> ReadLines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    out.push_back(line);
  }
  return out;
}

}  // namespace duopath
