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

// Parameters, forward-pass context, layers and the optimizer.

#ifndef DUOPATH_NN_H_
#define DUOPATH_NN_H_

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "duopath/autograd.h"
#include "duopath/common.h"

namespace duopath {

struct Parameter {
  std::string name;
  Matrix value;
  // Buffers (batch-norm running statistics, flags) are not trainable but are
  // saved and checksummed with the weights.
  bool trainable = true;
  bool frozen = false;

  std::string group() const { return name.substr(0, name.find('.')); }
};

// Insertion-ordered, name-addressed parameter storage with stable addresses.
class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(const ParameterSet&) = delete;
  ParameterSet& operator=(const ParameterSet&) = delete;
  ParameterSet(ParameterSet&&) = default;
  ParameterSet& operator=(ParameterSet&&) = default;

  Parameter& Add(const std::string& name, Matrix init, bool trainable = true);
  Parameter& Get(const std::string& name);
  const Parameter& Get(const std::string& name) const;
  bool Contains(const std::string& name) const { return index_.count(name) > 0; }

  const std::vector<std::unique_ptr<Parameter>>& all() const { return order_; }
  // Number of trainable scalars.
  size_t TrainableCount() const;
  size_t TrainableCount(const std::string& group) const;
  // Sorted, de-duplicated group names.
  std::vector<std::string> Groups() const;

  void SetFrozen(bool frozen);
  bool frozen() const { return frozen_; }

  // FNV-1a over names and raw value bytes of every parameter and buffer.
  uint64_t Checksum() const;

  // Copies values from `tensors` by name; every parameter must be present
  // with the same shape.
  void Load(const std::vector<std::pair<std::string, Matrix>>& tensors);
  std::vector<std::pair<std::string, Matrix>> Export() const;

 private:
  std::vector<std::unique_ptr<Parameter>> order_;
  std::map<std::string, Parameter*> index_;
  bool frozen_ = false;
};

// Per-forward context: training flag and the parameter leaves created for
// this graph, so gradients can be read back after ag::Backward.
class Tape {
 public:
  explicit Tape(bool training) : training_(training) {}

  bool training() const { return training_; }
  ag::Var Param(Parameter& p);
  Parameter* Lookup(const ag::Var& v) const;

  // (parameter, gradient) for every trainable, unfrozen parameter touched.
  std::vector<std::pair<Parameter*, Matrix>> Gradients() const;

 private:
  bool training_;
  std::unordered_map<Parameter*, ag::Var> cache_;
  std::vector<Parameter*> order_;
};

// Sums gradients over the items of a mini-batch.
class GradientBuffer {
 public:
  void Add(const std::vector<std::pair<Parameter*, Matrix>>& grads,
           double weight = 1.0);
  void Clear() { grads_.clear(); order_.clear(); }
  double GlobalNorm() const;
  void ScaleAll(double s);
  const std::vector<Parameter*>& params() const { return order_; }
  const Matrix* Find(Parameter* p) const;

 private:
  std::unordered_map<Parameter*, Matrix> grads_;
  std::vector<Parameter*> order_;
};

Matrix XavierUniform(Eigen::Index fan_in, Eigen::Index fan_out, Rng& rng);
Matrix SinusoidalPositions(Eigen::Index length, Eigen::Index dim);

class Linear {
 public:
  Linear() = default;
  Linear(ParameterSet& params, const std::string& name, int in, int out,
         Rng& rng, bool zero_init = false);
  ag::Var operator()(Tape& tape, const ag::Var& x) const;

 private:
  Parameter* w_ = nullptr;
  Parameter* b_ = nullptr;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParameterSet& params, const std::string& name, int dim);
  ag::Var operator()(Tape& tape, const ag::Var& x) const;

 private:
  Parameter* gamma_ = nullptr;
  Parameter* beta_ = nullptr;
};

class BatchNorm {
 public:
  BatchNorm() = default;
  BatchNorm(ParameterSet& params, const std::string& name, int channels);
  ag::Var operator()(Tape& tape, const ag::Var& x) const;

 private:
  Parameter* gamma_ = nullptr;
  Parameter* beta_ = nullptr;
  Parameter* mean_ = nullptr;
  Parameter* var_ = nullptr;
};

class Conv1d {
 public:
  Conv1d() = default;
  Conv1d(ParameterSet& params, const std::string& name, int in, int out,
         int kernel, Rng& rng);
  ag::Var operator()(Tape& tape, const ag::Var& x) const;

 private:
  Parameter* w_ = nullptr;
  Parameter* b_ = nullptr;
  int kernel_ = 1;
};

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParameterSet& params, const std::string& name, int in, int out,
         int stride_w, Rng& rng);
  ag::Var operator()(Tape& tape, const ag::Var& x, int height, int width) const;
  int stride_w() const { return stride_w_; }

 private:
  Parameter* w_ = nullptr;
  Parameter* b_ = nullptr;
  int stride_w_ = 1;
};

class Embedding {
 public:
  Embedding() = default;
  Embedding(ParameterSet& params, const std::string& name, int count, int dim,
            Rng& rng, double scale = 0.1);
  ag::Var operator()(Tape& tape, const std::vector<int>& ids) const;
  int count() const { return static_cast<int>(table_->value.rows()); }

 private:
  Parameter* table_ = nullptr;
};

// Multi-head scaled dot-product attention. Self-attention passes the same
// sequence as query and memory.
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(ParameterSet& params, const std::string& name, int dim,
                     int memory_dim, int heads, Rng& rng);
  // When `weights` is non-null the per-head attention matrices are appended.
  ag::Var operator()(Tape& tape, const ag::Var& query, const ag::Var& memory,
                     std::vector<Matrix>* weights = nullptr) const;

 private:
  Linear q_, k_, v_, o_;
  int dim_ = 0;
  int heads_ = 1;
};

// Feed-forward Transformer block: self-attention and a two-layer 1-D
// convolution, each wrapped in a residual connection and post layer norm.
class FftBlock {
 public:
  FftBlock() = default;
  FftBlock(ParameterSet& params, const std::string& name, int dim, int heads,
           int filter, int kernel, Rng& rng);
  ag::Var operator()(Tape& tape, const ag::Var& x) const;

 private:
  MultiHeadAttention attn_;
  LayerNorm ln1_, ln2_;
  Conv1d conv1_, conv2_;
};

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  int warmup_steps = 400;
  double grad_clip = 1.0;  // global norm; <= 0 disables
};

// Inverse-square-root schedule with linear warmup; `step` is 1-based.
double NoamLearningRate(double base, int warmup, long step);

class Adam {
 public:
  Adam(ParameterSet& params, const AdamConfig& cfg);

  // Applies one update from the (already averaged) gradients. Frozen and
  // non-trainable parameters are skipped. Returns the learning rate used.
  double Step(GradientBuffer& grads);
  long step() const { return step_; }

  std::vector<std::pair<std::string, Matrix>> ExportState() const;
  void LoadState(const std::vector<std::pair<std::string, Matrix>>& tensors);

 private:
  ParameterSet* params_;
  AdamConfig cfg_;
  long step_ = 0;
  std::map<std::string, std::pair<Matrix, Matrix>> moments_;
};

// Step-level hooks shared by the training loops. Steps are 1-based counts of
// optimizer updates; batch order depends only on (seed, epoch), so a run
// restored from an optimizer state replays exactly the remaining batches.
struct StepRecord {
  long step = 0;
  int epoch = 0;
  std::vector<std::pair<std::string, double>> losses;
};

struct TrainControl {
  // Optimizer state saved by a previous run; its step counter marks the
  // batches that are skipped.
  std::vector<std::pair<std::string, Matrix>> resume_state;
  // Stop after this many updates in total; <= 0 runs every epoch.
  long max_steps = 0;
  std::function<void(const StepRecord&)> on_step;
  // Called after each completed epoch and when max_steps stops the run.
  std::function<void(const Adam&, int epoch, bool epoch_complete)> on_save;

  // Restores `adam` and returns the number of updates already done.
  long Restore(Adam& adam) const;
  bool Reached(long step) const { return max_steps > 0 && step >= max_steps; }
};

}  // namespace duopath

#endif  // DUOPATH_NN_H_
