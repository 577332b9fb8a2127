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

#include "duopath/nn.h"

#include <algorithm>
#include <cmath>
#include <set>

namespace duopath {

using Eigen::Index;

Parameter& ParameterSet::Add(const std::string& name, Matrix init,
                             bool trainable) {
  if (index_.count(name)) {
    throw Error(ErrorCode::kBadCheckpoint, "duplicate parameter " + name);
  }
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->value = std::move(init);
  p->trainable = trainable;
  p->frozen = frozen_;
  Parameter* raw = p.get();
  order_.push_back(std::move(p));
  index_[name] = raw;
  return *raw;
}

Parameter& ParameterSet::Get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) {
    throw Error(ErrorCode::kBadCheckpoint, "no parameter " + name);
  }
  return *it->second;
}

const Parameter& ParameterSet::Get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) {
    throw Error(ErrorCode::kBadCheckpoint, "no parameter " + name);
  }
  return *it->second;
}

size_t ParameterSet::TrainableCount() const {
  size_t n = 0;
  for (const auto& p : order_) {
    if (p->trainable) n += p->value.size();
  }
  return n;
}

size_t ParameterSet::TrainableCount(const std::string& group) const {
  size_t n = 0;
  for (const auto& p : order_) {
    if (p->trainable && p->group() == group) n += p->value.size();
  }
  return n;
}

std::vector<std::string> ParameterSet::Groups() const {
  std::set<std::string> groups;
  for (const auto& p : order_) groups.insert(p->group());
  return {groups.begin(), groups.end()};
}

void ParameterSet::SetFrozen(bool frozen) {
  frozen_ = frozen;
  for (auto& p : order_) p->frozen = frozen;
}

uint64_t ParameterSet::Checksum() const {
  uint64_t h = Fnv1a(nullptr, 0);
  for (const auto& p : order_) {
    h = Fnv1a(p->name.data(), p->name.size(), h);
    h = Fnv1a(p->value.data(), sizeof(double) * p->value.size(), h);
  }
  return h;
}

void ParameterSet::Load(
    const std::vector<std::pair<std::string, Matrix>>& tensors) {
  std::map<std::string, const Matrix*> by_name;
  for (const auto& [name, m] : tensors) by_name[name] = &m;
  for (auto& p : order_) {
    auto it = by_name.find(p->name);
    if (it == by_name.end()) {
      throw Error(ErrorCode::kBadCheckpoint, "missing tensor " + p->name);
    }
    const Matrix& m = *it->second;
    if (m.rows() != p->value.rows() || m.cols() != p->value.cols()) {
      throw Error(ErrorCode::kBadCheckpoint, "shape mismatch for " + p->name);
    }
    p->value = m;
  }
}

std::vector<std::pair<std::string, Matrix>> ParameterSet::Export() const {
  std::vector<std::pair<std::string, Matrix>> out;
  out.reserve(order_.size());
  for (const auto& p : order_) out.emplace_back(p->name, p->value);
  return out;
}

ag::Var Tape::Param(Parameter& p) {
  auto it = cache_.find(&p);
  if (it != cache_.end()) return it->second;
  ag::Var v = ag::External(&p.value, p.trainable && !p.frozen);
  cache_.emplace(&p, v);
  order_.push_back(&p);
  return v;
}

Parameter* Tape::Lookup(const ag::Var& v) const {
  for (const auto& [p, var] : cache_) {
    if (var.node() == v.node()) return p;
  }
  return nullptr;
}

std::vector<std::pair<Parameter*, Matrix>> Tape::Gradients() const {
  std::vector<std::pair<Parameter*, Matrix>> out;
  for (Parameter* p : order_) {
    const ag::Var& v = cache_.at(p);
    if (!v.requires_grad() || v.grad().size() == 0) continue;
    out.emplace_back(p, v.grad());
  }
  return out;
}

void GradientBuffer::Add(
    const std::vector<std::pair<Parameter*, Matrix>>& grads, double weight) {
  for (const auto& [p, g] : grads) {
    auto it = grads_.find(p);
    if (it == grads_.end()) {
      grads_.emplace(p, g * weight);
      order_.push_back(p);
    } else {
      it->second += g * weight;
    }
  }
}

double GradientBuffer::GlobalNorm() const {
  double sq = 0.0;
  for (Parameter* p : order_) sq += grads_.at(p).squaredNorm();
  return std::sqrt(sq);
}

void GradientBuffer::ScaleAll(double s) {
  for (auto& [p, g] : grads_) g *= s;
}

const Matrix* GradientBuffer::Find(Parameter* p) const {
  auto it = grads_.find(p);
  return it == grads_.end() ? nullptr : &it->second;
}

Matrix XavierUniform(Index fan_in, Index fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / double(fan_in + fan_out));
  Matrix m(fan_in, fan_out);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.Uniform(-limit, limit);
  return m;
}

Matrix SinusoidalPositions(Index length, Index dim) {
  Matrix pe(length, dim);
  for (Index t = 0; t < length; ++t) {
    for (Index i = 0; i < dim; ++i) {
      const double rate = std::pow(10000.0, -double(2 * (i / 2)) / double(dim));
      pe(t, i) = (i % 2 == 0) ? std::sin(t * rate) : std::cos(t * rate);
    }
  }
  return pe;
}

Linear::Linear(ParameterSet& params, const std::string& name, int in, int out,
               Rng& rng, bool zero_init) {
  w_ = &params.Add(name + ".weight",
                   zero_init ? Matrix(Matrix::Zero(in, out))
                             : XavierUniform(in, out, rng));
  b_ = &params.Add(name + ".bias", Matrix::Zero(1, out));
}

ag::Var Linear::operator()(Tape& tape, const ag::Var& x) const {
  return ag::AddRow(ag::MatMul(x, tape.Param(*w_)), tape.Param(*b_));
}

LayerNorm::LayerNorm(ParameterSet& params, const std::string& name, int dim) {
  gamma_ = &params.Add(name + ".gamma", Matrix::Ones(1, dim));
  beta_ = &params.Add(name + ".beta", Matrix::Zero(1, dim));
}

ag::Var LayerNorm::operator()(Tape& tape, const ag::Var& x) const {
  return ag::LayerNormRows(x, tape.Param(*gamma_), tape.Param(*beta_));
}

BatchNorm::BatchNorm(ParameterSet& params, const std::string& name,
                     int channels) {
  gamma_ = &params.Add(name + ".gamma", Matrix::Ones(1, channels));
  beta_ = &params.Add(name + ".beta", Matrix::Zero(1, channels));
  mean_ = &params.Add(name + ".running_mean", Matrix::Zero(1, channels), false);
  var_ = &params.Add(name + ".running_var", Matrix::Ones(1, channels), false);
}

ag::Var BatchNorm::operator()(Tape& tape, const ag::Var& x) const {
  ag::BatchNormState state;
  state.running_mean = &mean_->value;
  state.running_var = &var_->value;
  const bool update = tape.training() && !mean_->frozen;
  return ag::BatchNormRows(x, tape.Param(*gamma_), tape.Param(*beta_), state,
                           tape.training(), update);
}

Conv1d::Conv1d(ParameterSet& params, const std::string& name, int in, int out,
               int kernel, Rng& rng)
    : kernel_(kernel) {
  w_ = &params.Add(name + ".weight", XavierUniform(Index(kernel) * in, out, rng));
  b_ = &params.Add(name + ".bias", Matrix::Zero(1, out));
}

ag::Var Conv1d::operator()(Tape& tape, const ag::Var& x) const {
  return ag::Conv1d(x, tape.Param(*w_), tape.Param(*b_), kernel_);
}

Conv2d::Conv2d(ParameterSet& params, const std::string& name, int in, int out,
               int stride_w, Rng& rng)
    : stride_w_(stride_w) {
  w_ = &params.Add(name + ".weight", XavierUniform(9 * Index(in), out, rng));
  b_ = &params.Add(name + ".bias", Matrix::Zero(1, out));
}

ag::Var Conv2d::operator()(Tape& tape, const ag::Var& x, int height,
                           int width) const {
  return ag::Conv2d3x3(x, height, width, tape.Param(*w_), tape.Param(*b_),
                       stride_w_);
}

Embedding::Embedding(ParameterSet& params, const std::string& name, int count,
                     int dim, Rng& rng, double scale) {
  Matrix table(count, dim);
  for (Index i = 0; i < table.size(); ++i) table.data()[i] = scale * rng.Normal();
  table_ = &params.Add(name + ".table", std::move(table));
}

ag::Var Embedding::operator()(Tape& tape, const std::vector<int>& ids) const {
  return ag::GatherRows(tape.Param(*table_), ids);
}

MultiHeadAttention::MultiHeadAttention(ParameterSet& params,
                                       const std::string& name, int dim,
                                       int memory_dim, int heads, Rng& rng)
    : dim_(dim), heads_(heads) {
  if (dim % heads != 0) {
    throw Error(ErrorCode::kBadConfig, name + ": dim not divisible by heads");
  }
  q_ = Linear(params, name + ".query", dim, dim, rng);
  k_ = Linear(params, name + ".key", memory_dim, dim, rng);
  v_ = Linear(params, name + ".value", memory_dim, dim, rng);
  o_ = Linear(params, name + ".out", dim, dim, rng);
}

ag::Var MultiHeadAttention::operator()(Tape& tape, const ag::Var& query,
                                       const ag::Var& memory,
                                       std::vector<Matrix>* weights) const {
  const ag::Var q = q_(tape, query);
  const ag::Var k = k_(tape, memory);
  const ag::Var v = v_(tape, memory);
  const int head_dim = dim_ / heads_;
  const double scale = 1.0 / std::sqrt(double(head_dim));
  std::vector<ag::Var> outs;
  outs.reserve(heads_);
  for (int h = 0; h < heads_; ++h) {
    const ag::Var qh = ag::SliceCols(q, h * head_dim, head_dim);
    const ag::Var kh = ag::SliceCols(k, h * head_dim, head_dim);
    const ag::Var vh = ag::SliceCols(v, h * head_dim, head_dim);
    const ag::Var attn = ag::SoftmaxRows(ag::Scale(ag::MatMulNT(qh, kh), scale));
    if (weights) weights->push_back(attn.value());
    outs.push_back(ag::MatMul(attn, vh));
  }
  return o_(tape, heads_ == 1 ? outs[0] : ag::HCat(outs));
}

FftBlock::FftBlock(ParameterSet& params, const std::string& name, int dim,
                   int heads, int filter, int kernel, Rng& rng) {
  attn_ = MultiHeadAttention(params, name + ".attn", dim, dim, heads, rng);
  ln1_ = LayerNorm(params, name + ".ln1", dim);
  conv1_ = Conv1d(params, name + ".conv1", dim, filter, kernel, rng);
  conv2_ = Conv1d(params, name + ".conv2", filter, dim, 1, rng);
  ln2_ = LayerNorm(params, name + ".ln2", dim);
}

ag::Var FftBlock::operator()(Tape& tape, const ag::Var& x) const {
  ag::Var h = ln1_(tape, ag::Add(x, attn_(tape, x, x)));
  ag::Var f = conv2_(tape, ag::Relu(conv1_(tape, h)));
  return ln2_(tape, ag::Add(h, f));
}

double NoamLearningRate(double base, int warmup, long step) {
  if (step < 1) step = 1;
  if (warmup <= 0) return base;
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(warmup);
  return base * std::min(s / w, std::sqrt(w / s));
}

Adam::Adam(ParameterSet& params, const AdamConfig& cfg)
    : params_(&params), cfg_(cfg) {}

double Adam::Step(GradientBuffer& grads) {
  ++step_;
  if (cfg_.grad_clip > 0.0) {
    const double norm = grads.GlobalNorm();
    if (!std::isfinite(norm)) {
      throw Error(ErrorCode::kNumericalError, "non-finite gradient norm");
    }
    if (norm > cfg_.grad_clip) grads.ScaleAll(cfg_.grad_clip / norm);
  }
  const double lr = NoamLearningRate(cfg_.learning_rate, cfg_.warmup_steps, step_);
  const double bc1 = 1.0 - std::pow(cfg_.beta1, double(step_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, double(step_));
  for (const auto& p : params_->all()) {
    if (!p->trainable || p->frozen) continue;
    const Matrix* g = grads.Find(p.get());
    if (!g) continue;
    auto it = moments_.find(p->name);
    if (it == moments_.end()) {
      it = moments_
               .emplace(p->name,
                        std::make_pair(Matrix(Matrix::Zero(g->rows(), g->cols())),
                                       Matrix(Matrix::Zero(g->rows(), g->cols()))))
               .first;
    }
    Matrix& m = it->second.first;
    Matrix& v = it->second.second;
    m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * *g;
    v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g->cwiseProduct(*g);
    p->value.array() -= lr * (m.array() / bc1) /
                        ((v.array() / bc2).sqrt() + cfg_.eps);
  }
  return lr;
}

std::vector<std::pair<std::string, Matrix>> Adam::ExportState() const {
  std::vector<std::pair<std::string, Matrix>> out;
  Matrix step(1, 1);
  step(0, 0) = static_cast<double>(step_);
  out.emplace_back("adam.step", step);
  for (const auto& [name, mv] : moments_) {
    out.emplace_back("adam.m." + name, mv.first);
    out.emplace_back("adam.v." + name, mv.second);
  }
  return out;
}

void Adam::LoadState(const std::vector<std::pair<std::string, Matrix>>& tensors) {
  moments_.clear();
  step_ = 0;
  std::map<std::string, Matrix> m, v;
  for (const auto& [name, value] : tensors) {
    if (name == "adam.step") {
      step_ = static_cast<long>(value(0, 0));
    } else if (name.rfind("adam.m.", 0) == 0) {
      m[name.substr(7)] = value;
    } else if (name.rfind("adam.v.", 0) == 0) {
      v[name.substr(7)] = value;
    }
  }
  for (auto& [name, value] : m) {
    moments_[name] = std::make_pair(value, v.at(name));
  }
}

long TrainControl::Restore(Adam& adam) const {
  if (!resume_state.empty()) adam.LoadState(resume_state);
  return adam.step();
}

}  // namespace duopath
