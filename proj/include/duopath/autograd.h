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

// Tape-free reverse-mode differentiation over 2-D matrices.
//
// Every value is a row-major matrix. Sequences are laid out frame-major
// (rows = time steps, cols = channels). 2-D feature maps of height H (time)
// and width W (frequency) use rows = h * W + w, so reshaping a map to
// H x (W * C) is a pure reinterpretation of storage.
//
// Graphs are built eagerly; Backward() walks the graph reachable from a
// scalar root in reverse topological order and accumulates into Node::grad.

#ifndef DUOPATH_AUTOGRAD_H_
#define DUOPATH_AUTOGRAD_H_

#include <functional>
#include <memory>
#include <vector>

#include "duopath/common.h"

namespace duopath {
namespace ag {

struct Node {
  Matrix value;
  // Parameter leaves point at storage owned elsewhere instead of copying it.
  const Matrix* external = nullptr;
  Matrix grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  const Matrix& val() const { return external ? *external : value; }
  void AccumulateGrad(const Matrix& g);
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Matrix& value() const { return node_->val(); }
  // Empty matrix when nothing was accumulated.
  const Matrix& grad() const { return node_->grad; }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool requires_grad() const { return node_->requires_grad; }
  double scalar() const { return value()(0, 0); }
  bool defined() const { return static_cast<bool>(node_); }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

Var Constant(Matrix value);
Var Leaf(Matrix value, bool requires_grad = true);
Var External(const Matrix* value, bool requires_grad);

// Seeds d(root)/d(root) = 1; root must be 1x1.
void Backward(const Var& root);

// Linear algebra.
Var MatMul(const Var& a, const Var& b);
Var MatMulNT(const Var& a, const Var& b);  // a * b^T
Var Transpose(const Var& a);

// Elementwise.
Var Add(const Var& a, const Var& b);
Var Sub(const Var& a, const Var& b);
Var Mul(const Var& a, const Var& b);
Var Scale(const Var& a, double s);
Var AddConstant(const Var& a, const Matrix& c);
Var Relu(const Var& a);
Var Tanh(const Var& a);
Var Log(const Var& a);
// 1 / (1 + a)
Var InvOnePlus(const Var& a);

// Broadcasting. `row` is 1xC.
Var AddRow(const Var& a, const Var& row);
Var BroadcastRows(const Var& row, Eigen::Index n);
// Adds an n x 1 column to every column of `a`.
Var AddCol(const Var& a, const Var& col);

// Row-wise reductions and normalizations.
Var SoftmaxRows(const Var& a);
Var LogSoftmaxRows(const Var& a);
Var RowL2Normalize(const Var& a, double eps = 1e-12);
// Divides each row by its sum.
Var RowNormalizeSum(const Var& a);
// ||a_i - b_j||^2 as an n x m matrix.
Var PairwiseSqDist(const Var& a, const Var& b);
// out(i, 0) = a(i, cols[i]).
Var PickPerRow(const Var& a, const std::vector<int>& cols);
Var MeanRows(const Var& a);
Var Sum(const Var& a);
Var Mean(const Var& a);

// Normalization layers. gamma/beta are 1xC.
Var LayerNormRows(const Var& x, const Var& gamma, const Var& beta,
                  double eps = 1e-5);
struct BatchNormState {
  Matrix* running_mean = nullptr;  // 1xC
  Matrix* running_var = nullptr;   // 1xC
  double momentum = 0.1;
  double eps = 1e-5;
};
// Statistics are per column over all rows. In training mode the running
// statistics are updated in place when `update_running` is set.
Var BatchNormRows(const Var& x, const Var& gamma, const Var& beta,
                  const BatchNormState& state, bool training,
                  bool update_running);

// Same-padded 1-D convolution over rows. w is (kernel*Cin) x Cout, b is 1xCout.
Var Conv1d(const Var& x, const Var& w, const Var& b, int kernel);
// 3x3 convolution on an (height*width) x Cin map, padding 1, stride 1 along
// height and `stride_w` along width. Output width is (width - 1) / stride_w + 1.
Var Conv2d3x3(const Var& x, int height, int width, const Var& w, const Var& b,
              int stride_w);
// Nearest-neighbour upsampling along width.
Var UpsampleWidth(const Var& x, int height, int width, int factor);
Var Reshape(const Var& x, Eigen::Index rows, Eigen::Index cols);

// Indexing.
Var GatherRows(const Var& table, const std::vector<int>& index);
// Row i repeated counts[i] times, in order.
Var RepeatRows(const Var& x, const std::vector<int>& counts);
Var SliceRows(const Var& x, Eigen::Index start, Eigen::Index n);
Var SliceCols(const Var& x, Eigen::Index start, Eigen::Index n);
Var HCat(const std::vector<Var>& parts);
Var VCat(const std::vector<Var>& parts);

// Stop-gradient.
Var Detach(const Var& x);
// Forward value of `zq`, gradient copied unchanged to `z`. Equivalent to
// z + Detach(zq - z) without the rounding of the add/subtract pair.
Var StraightThrough(const Var& z, const Var& zq);

// Losses, reduced to 1x1.
Var MseLoss(const Var& pred, const Var& target);
Var L1Loss(const Var& pred, const Var& target);

}  // namespace ag
}  // namespace duopath

#endif  // DUOPATH_AUTOGRAD_H_
