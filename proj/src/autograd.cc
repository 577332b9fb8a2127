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

#include "duopath/autograd.h"

#include <cmath>
#include <string>
#include <unordered_set>
#include <utility>

namespace duopath {
namespace ag {

namespace {

using Index = Eigen::Index;

void CheckShape(bool ok, const std::string& op, const Matrix& a,
                const Matrix& b) {
  if (!ok) {
    throw Error(ErrorCode::kShapeMismatch,
                op + ": " + std::to_string(a.rows()) + "x" +
                    std::to_string(a.cols()) + " vs " +
                    std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
}

using BackwardFn = std::function<void(Node&)>;

Var MakeOp(Matrix value, std::vector<Var> inputs, BackwardFn backward) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  bool needs = false;
  for (const Var& in : inputs) needs = needs || in.requires_grad();
  if (needs) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (const Var& in : inputs) node->inputs.push_back(in.node());
    node->backward = std::move(backward);
  }
  return Var(std::move(node));
}

inline bool Needs(const Node& self, size_t i) {
  return self.inputs[i]->requires_grad;
}

}  // namespace

void Node::AccumulateGrad(const Matrix& g) {
  if (grad.size() == 0) {
    grad = g;
  } else {
    grad += g;
  }
}

Var Constant(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var Leaf(Matrix value, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  return Var(std::move(node));
}

Var External(const Matrix* value, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->external = value;
  node->requires_grad = requires_grad;
  return Var(std::move(node));
}

void Backward(const Var& root) {
  if (root.rows() != 1 || root.cols() != 1) {
    throw Error(ErrorCode::kShapeMismatch, "Backward: root must be scalar");
  }
  if (!root.requires_grad()) return;
  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && !visited.count(child)) {
        visited.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root.node()->AccumulateGrad(Matrix::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && node->grad.size() != 0) node->backward(*node);
  }
}

Var MatMul(const Var& a, const Var& b) {
  CheckShape(a.cols() == b.rows(), "MatMul", a.value(), b.value());
  Matrix out = a.value() * b.value();
  return MakeOp(std::move(out), {a, b}, [](Node& self) {
    const Matrix& A = self.inputs[0]->val();
    const Matrix& B = self.inputs[1]->val();
    if (Needs(self, 0)) self.inputs[0]->AccumulateGrad(self.grad * B.transpose());
    if (Needs(self, 1)) self.inputs[1]->AccumulateGrad(A.transpose() * self.grad);
  });
}

Var MatMulNT(const Var& a, const Var& b) {
  CheckShape(a.cols() == b.cols(), "MatMulNT", a.value(), b.value());
  Matrix out = a.value() * b.value().transpose();
  return MakeOp(std::move(out), {a, b}, [](Node& self) {
    const Matrix& A = self.inputs[0]->val();
    const Matrix& B = self.inputs[1]->val();
    if (Needs(self, 0)) self.inputs[0]->AccumulateGrad(self.grad * B);
    if (Needs(self, 1)) self.inputs[1]->AccumulateGrad(self.grad.transpose() * A);
  });
}

Var Transpose(const Var& a) {
  Matrix out = a.value().transpose();
  return MakeOp(std::move(out), {a}, [](Node& self) {
    self.inputs[0]->AccumulateGrad(self.grad.transpose());
  });
}

Var Add(const Var& a, const Var& b) {
  CheckShape(a.rows() == b.rows() && a.cols() == b.cols(), "Add", a.value(),
             b.value());
  Matrix out = a.value() + b.value();
  return MakeOp(std::move(out), {a, b}, [](Node& self) {
    if (Needs(self, 0)) self.inputs[0]->AccumulateGrad(self.grad);
    if (Needs(self, 1)) self.inputs[1]->AccumulateGrad(self.grad);
  });
}

Var Sub(const Var& a, const Var& b) {
  CheckShape(a.rows() == b.rows() && a.cols() == b.cols(), "Sub", a.value(),
             b.value());
  Matrix out = a.value() - b.value();
  return MakeOp(std::move(out), {a, b}, [](Node& self) {
    if (Needs(self, 0)) self.inputs[0]->AccumulateGrad(self.grad);
    if (Needs(self, 1)) self.inputs[1]->AccumulateGrad(-self.grad);
  });
}

Var Mul(const Var& a, const Var& b) {
  CheckShape(a.rows() == b.rows() && a.cols() == b.cols(), "Mul", a.value(),
             b.value());
  Matrix out = a.value().cwiseProduct(b.value());
  return MakeOp(std::move(out), {a, b}, [](Node& self) {
    const Matrix& A = self.inputs[0]->val();
    const Matrix& B = self.inputs[1]->val();
    if (Needs(self, 0)) self.inputs[0]->AccumulateGrad(self.grad.cwiseProduct(B));
    if (Needs(self, 1)) self.inputs[1]->AccumulateGrad(self.grad.cwiseProduct(A));
  });
}

Var Scale(const Var& a, double s) {
  Matrix out = a.value() * s;
  return MakeOp(std::move(out), {a}, [s](Node& self) {
    self.inputs[0]->AccumulateGrad(self.grad * s);
  });
}

Var AddConstant(const Var& a, const Matrix& c) {
  CheckShape(a.rows() == c.rows() && a.cols() == c.cols(), "AddConstant",
             a.value(), c);
  Matrix out = a.value() + c;
  return MakeOp(std::move(out), {a}, [](Node& self) {
    self.inputs[0]->AccumulateGrad(self.grad);
  });
}

Var Relu(const Var& a) {
  Matrix out = a.value().cwiseMax(0.0);
  return MakeOp(std::move(out), {a}, [](Node& self) {
    const Matrix& A = self.inputs[0]->val();
    self.inputs[0]->AccumulateGrad(
        (A.array() > 0.0).select(self.grad, 0.0).matrix());
  });
}

Var Tanh(const Var& a) {
  Matrix out = a.value().array().tanh().matrix();
  return MakeOp(std::move(out), {a}, [](Node& self) {
    const Matrix& Y = self.value;
    self.inputs[0]->AccumulateGrad(
        self.grad.cwiseProduct((1.0 - Y.array().square()).matrix()));
  });
}

Var Log(const Var& a) {
  Matrix out = a.value().array().log().matrix();
  return MakeOp(std::move(out), {a}, [](Node& self) {
    const Matrix& A = self.inputs[0]->val();
    self.inputs[0]->AccumulateGrad(self.grad.cwiseQuotient(A));
  });
}

Var InvOnePlus(const Var& a) {
  Matrix out = (1.0 / (1.0 + a.value().array())).matrix();
  return MakeOp(std::move(out), {a}, [](Node& self) {
    const Matrix& Y = self.value;
    self.inputs[0]->AccumulateGrad(
        (-self.grad.array() * Y.array().square()).matrix());
  });
}

Var AddRow(const Var& a, const Var& row) {
  CheckShape(row.rows() == 1 && row.cols() == a.cols(), "AddRow", a.value(),
             row.value());
  Matrix out = a.value().rowwise() + row.value().row(0);
  return MakeOp(std::move(out), {a, row}, [](Node& self) {
    if (Needs(self, 0)) self.inputs[0]->AccumulateGrad(self.grad);
    if (Needs(self, 1)) self.inputs[1]->AccumulateGrad(self.grad.colwise().sum());
  });
}

Var BroadcastRows(const Var& row, Index n) {
  if (row.rows() != 1) {
    throw Error(ErrorCode::kShapeMismatch, "BroadcastRows: expected a row");
  }
  Matrix out = row.value().replicate(n, 1);
  return MakeOp(std::move(out), {row}, [](Node& self) {
    self.inputs[0]->AccumulateGrad(self.grad.colwise().sum());
  });
}

Var AddCol(const Var& a, const Var& col) {
  CheckShape(col.cols() == 1 && col.rows() == a.rows(), "AddCol", a.value(),
             col.value());
  Matrix out = a.value().colwise() + col.value().col(0);
  return MakeOp(std::move(out), {a, col}, [](Node& self) {
    if (Needs(self, 0)) self.inputs[0]->AccumulateGrad(self.grad);
    if (Needs(self, 1)) self.inputs[1]->AccumulateGrad(self.grad.rowwise().sum());
  });
}

Var SoftmaxRows(const Var& a) {
  Matrix out = a.value();
  for (Index i = 0; i < out.rows(); ++i) {
    const double m = out.row(i).maxCoeff();
    out.row(i) = (out.row(i).array() - m).exp().matrix();
    out.row(i) /= out.row(i).sum();
  }
  return MakeOp(std::move(out), {a}, [](Node& self) {
    const Matrix& Y = self.value;
    const Vector dot = self.grad.cwiseProduct(Y).rowwise().sum();
    Matrix g = (self.grad.colwise() - dot).cwiseProduct(Y);
    self.inputs[0]->AccumulateGrad(g);
  });
}

Var LogSoftmaxRows(const Var& a) {
  Matrix out = a.value();
  for (Index i = 0; i < out.rows(); ++i) {
    const double m = out.row(i).maxCoeff();
    const double lse = m + std::log((out.row(i).array() - m).exp().sum());
    out.row(i).array() -= lse;
  }
  return MakeOp(std::move(out), {a}, [](Node& self) {
    const Matrix softmax = self.value.array().exp().matrix();
    const Vector total = self.grad.rowwise().sum();
    Matrix g = self.grad - (softmax.array().colwise() * total.array()).matrix();
    self.inputs[0]->AccumulateGrad(g);
  });
}

Var RowL2Normalize(const Var& a, double eps) {
  const Vector norms =
      a.value().rowwise().norm().array().max(eps).matrix();
  Matrix out = a.value().array().colwise() / norms.array();
  return MakeOp(std::move(out), {a}, [norms](Node& self) {
    const Matrix& Y = self.value;
    const Vector dot = self.grad.cwiseProduct(Y).rowwise().sum();
    Matrix g = (self.grad - (Y.array().colwise() * dot.array()).matrix());
    g.array().colwise() /= norms.array();
    self.inputs[0]->AccumulateGrad(g);
  });
}

Var RowNormalizeSum(const Var& a) {
  const Vector sums = a.value().rowwise().sum();
  Matrix out = a.value().array().colwise() / sums.array();
  return MakeOp(std::move(out), {a}, [sums](Node& self) {
    const Matrix& Y = self.value;
    const Vector dot = self.grad.cwiseProduct(Y).rowwise().sum();
    Matrix g = self.grad.colwise() - dot;
    g.array().colwise() /= sums.array();
    self.inputs[0]->AccumulateGrad(g);
  });
}

Var PairwiseSqDist(const Var& a, const Var& b) {
  CheckShape(a.cols() == b.cols(), "PairwiseSqDist", a.value(), b.value());
  const Matrix& A = a.value();
  const Matrix& B = b.value();
  Matrix out(A.rows(), B.rows());
  for (Index i = 0; i < A.rows(); ++i) {
    for (Index j = 0; j < B.rows(); ++j) {
      out(i, j) = (A.row(i) - B.row(j)).squaredNorm();
    }
  }
  return MakeOp(std::move(out), {a, b}, [](Node& self) {
    const Matrix& A = self.inputs[0]->val();
    const Matrix& B = self.inputs[1]->val();
    const Matrix& G = self.grad;
    // d/dA_i = 2 sum_j G_ij (A_i - B_j); d/dB_j = -2 sum_i G_ij (A_i - B_j)
    const Vector row_sum = G.rowwise().sum();
    const Vector col_sum = G.colwise().sum().transpose();
    if (Needs(self, 0)) {
      Matrix g = 2.0 * ((A.array().colwise() * row_sum.array()).matrix() - G * B);
      self.inputs[0]->AccumulateGrad(g);
    }
    if (Needs(self, 1)) {
      Matrix g = 2.0 * ((B.array().colwise() * col_sum.array()).matrix() -
                        G.transpose() * A);
      self.inputs[1]->AccumulateGrad(g);
    }
  });
}

Var PickPerRow(const Var& a, const std::vector<int>& cols) {
  if (static_cast<Index>(cols.size()) != a.rows()) {
    throw Error(ErrorCode::kShapeMismatch, "PickPerRow: index count");
  }
  Matrix out(a.rows(), 1);
  for (Index i = 0; i < a.rows(); ++i) out(i, 0) = a.value()(i, cols[i]);
  return MakeOp(std::move(out), {a}, [cols](Node& self) {
    const Matrix& A = self.inputs[0]->val();
    Matrix g = Matrix::Zero(A.rows(), A.cols());
    for (Index i = 0; i < A.rows(); ++i) g(i, cols[i]) = self.grad(i, 0);
    self.inputs[0]->AccumulateGrad(g);
  });
}

Var MeanRows(const Var& a) {
  const Index n = a.rows();
  if (n == 0) throw Error(ErrorCode::kShapeMismatch, "MeanRows: no rows");
  Matrix out = a.value().colwise().mean();
  return MakeOp(std::move(out), {a}, [n](Node& self) {
    self.inputs[0]->AccumulateGrad(self.grad.replicate(n, 1) / double(n));
  });
}

Var Sum(const Var& a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return MakeOp(std::move(out), {a}, [](Node& self) {
    const Matrix& A = self.inputs[0]->val();
    self.inputs[0]->AccumulateGrad(
        Matrix::Constant(A.rows(), A.cols(), self.grad(0, 0)));
  });
}

Var Mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  if (n == 0) throw Error(ErrorCode::kShapeMismatch, "Mean: empty");
  Matrix out(1, 1);
  out(0, 0) = a.value().sum() / n;
  return MakeOp(std::move(out), {a}, [n](Node& self) {
    const Matrix& A = self.inputs[0]->val();
    self.inputs[0]->AccumulateGrad(
        Matrix::Constant(A.rows(), A.cols(), self.grad(0, 0) / n));
  });
}

Var LayerNormRows(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const Matrix& X = x.value();
  const Index C = X.cols();
  CheckShape(gamma.cols() == C && beta.cols() == C, "LayerNormRows", X,
             gamma.value());
  const Vector mean = X.rowwise().mean();
  Matrix xhat = X.colwise() - mean;
  const Vector inv_std =
      (xhat.array().square().rowwise().mean() + eps).rsqrt().matrix();
  xhat.array().colwise() *= inv_std.array();
  Matrix out = (xhat.array().rowwise() * gamma.value().row(0).array()).matrix();
  out.rowwise() += beta.value().row(0);
  return MakeOp(std::move(out), {x, gamma, beta},
                [xhat = std::move(xhat), inv_std](Node& self) {
    const Matrix& G = self.grad;
    const Matrix& g = self.inputs[1]->val();
    if (Needs(self, 0)) {
      const Matrix dxhat = (G.array().rowwise() * g.row(0).array()).matrix();
      const Vector m1 = dxhat.rowwise().mean();
      const Vector m2 = dxhat.cwiseProduct(xhat).rowwise().mean();
      Matrix dx = dxhat.colwise() - m1;
      dx -= (xhat.array().colwise() * m2.array()).matrix();
      dx.array().colwise() *= inv_std.array();
      self.inputs[0]->AccumulateGrad(dx);
    }
    if (Needs(self, 1)) {
      self.inputs[1]->AccumulateGrad(G.cwiseProduct(xhat).colwise().sum());
    }
    if (Needs(self, 2)) self.inputs[2]->AccumulateGrad(G.colwise().sum());
  });
}

Var BatchNormRows(const Var& x, const Var& gamma, const Var& beta,
                  const BatchNormState& state, bool training,
                  bool update_running) {
  const Matrix& X = x.value();
  const Index C = X.cols();
  const Index n = X.rows();
  CheckShape(gamma.cols() == C && beta.cols() == C, "BatchNormRows", X,
             gamma.value());
  RowVector mean, var;
  if (training) {
    mean = X.colwise().mean();
    var = (X.rowwise() - mean).array().square().colwise().mean().matrix();
    if (update_running && state.running_mean && state.running_var) {
      const double m = state.momentum;
      const double unbiased = n > 1 ? double(n) / double(n - 1) : 1.0;
      *state.running_mean = (1.0 - m) * *state.running_mean + m * mean;
      *state.running_var = (1.0 - m) * *state.running_var + m * unbiased * var;
    }
  } else {
    mean = state.running_mean->row(0);
    var = state.running_var->row(0);
  }
  const RowVector inv_std = (var.array() + state.eps).rsqrt().matrix();
  Matrix xhat = ((X.rowwise() - mean).array().rowwise() * inv_std.array()).matrix();
  Matrix out = (xhat.array().rowwise() * gamma.value().row(0).array()).matrix();
  out.rowwise() += beta.value().row(0);
  return MakeOp(std::move(out), {x, gamma, beta},
                [xhat = std::move(xhat), inv_std, training](Node& self) {
    const Matrix& G = self.grad;
    const Matrix& g = self.inputs[1]->val();
    if (Needs(self, 0)) {
      const Matrix dxhat = (G.array().rowwise() * g.row(0).array()).matrix();
      Matrix dx;
      if (training) {
        const RowVector m1 = dxhat.colwise().mean();
        const RowVector m2 = dxhat.cwiseProduct(xhat).colwise().mean();
        dx = dxhat.rowwise() - m1;
        dx -= (xhat.array().rowwise() * m2.array()).matrix();
      } else {
        dx = dxhat;
      }
      dx.array().rowwise() *= inv_std.array();
      self.inputs[0]->AccumulateGrad(dx);
    }
    if (Needs(self, 1)) {
      self.inputs[1]->AccumulateGrad(G.cwiseProduct(xhat).colwise().sum());
    }
    if (Needs(self, 2)) self.inputs[2]->AccumulateGrad(G.colwise().sum());
  });
}

Var Conv1d(const Var& x, const Var& w, const Var& b, int kernel) {
  const Matrix& X = x.value();
  const Index T = X.rows();
  const Index cin = X.cols();
  if (w.rows() != kernel * cin || b.rows() != 1 || b.cols() != w.cols()) {
    throw Error(ErrorCode::kShapeMismatch, "Conv1d: weight shape");
  }
  const int pad = (kernel - 1) / 2;
  Matrix col = Matrix::Zero(T, kernel * cin);
  for (Index t = 0; t < T; ++t) {
    for (int j = 0; j < kernel; ++j) {
      const Index src = t + j - pad;
      if (src < 0 || src >= T) continue;
      col.block(t, j * cin, 1, cin) = X.row(src);
    }
  }
  Matrix out = col * w.value();
  out.rowwise() += b.value().row(0);
  return MakeOp(std::move(out), {x, w, b},
                [col = std::move(col), kernel, pad, T, cin](Node& self) {
    const Matrix& G = self.grad;
    if (Needs(self, 0)) {
      const Matrix dcol = G * self.inputs[1]->val().transpose();
      Matrix dx = Matrix::Zero(T, cin);
      for (Index t = 0; t < T; ++t) {
        for (int j = 0; j < kernel; ++j) {
          const Index src = t + j - pad;
          if (src < 0 || src >= T) continue;
          dx.row(src) += dcol.block(t, j * cin, 1, cin);
        }
      }
      self.inputs[0]->AccumulateGrad(dx);
    }
    if (Needs(self, 1)) self.inputs[1]->AccumulateGrad(col.transpose() * G);
    if (Needs(self, 2)) self.inputs[2]->AccumulateGrad(G.colwise().sum());
  });
}

Var Conv2d3x3(const Var& x, int height, int width, const Var& w, const Var& b,
              int stride_w) {
  const Matrix& X = x.value();
  const Index cin = X.cols();
  if (X.rows() != Index(height) * width) {
    throw Error(ErrorCode::kShapeMismatch, "Conv2d3x3: map size");
  }
  if (w.rows() != 9 * cin || b.rows() != 1 || b.cols() != w.cols()) {
    throw Error(ErrorCode::kShapeMismatch, "Conv2d3x3: weight shape");
  }
  const int out_w = (width - 1) / stride_w + 1;
  Matrix col = Matrix::Zero(Index(height) * out_w, 9 * cin);
  for (int h = 0; h < height; ++h) {
    for (int wo = 0; wo < out_w; ++wo) {
      const Index row = Index(h) * out_w + wo;
      for (int kh = 0; kh < 3; ++kh) {
        const int sh = h + kh - 1;
        if (sh < 0 || sh >= height) continue;
        for (int kw = 0; kw < 3; ++kw) {
          const int sw = wo * stride_w + kw - 1;
          if (sw < 0 || sw >= width) continue;
          col.block(row, (kh * 3 + kw) * cin, 1, cin) =
              X.row(Index(sh) * width + sw);
        }
      }
    }
  }
  Matrix out = col * w.value();
  out.rowwise() += b.value().row(0);
  return MakeOp(std::move(out), {x, w, b},
                [col = std::move(col), height, width, out_w, stride_w,
                 cin](Node& self) {
    const Matrix& G = self.grad;
    if (Needs(self, 0)) {
      const Matrix dcol = G * self.inputs[1]->val().transpose();
      Matrix dx = Matrix::Zero(Index(height) * width, cin);
      for (int h = 0; h < height; ++h) {
        for (int wo = 0; wo < out_w; ++wo) {
          const Index row = Index(h) * out_w + wo;
          for (int kh = 0; kh < 3; ++kh) {
            const int sh = h + kh - 1;
            if (sh < 0 || sh >= height) continue;
            for (int kw = 0; kw < 3; ++kw) {
              const int sw = wo * stride_w + kw - 1;
              if (sw < 0 || sw >= width) continue;
              dx.row(Index(sh) * width + sw) +=
                  dcol.block(row, (kh * 3 + kw) * cin, 1, cin);
            }
          }
        }
      }
      self.inputs[0]->AccumulateGrad(dx);
    }
    if (Needs(self, 1)) self.inputs[1]->AccumulateGrad(col.transpose() * G);
    if (Needs(self, 2)) self.inputs[2]->AccumulateGrad(G.colwise().sum());
  });
}

Var UpsampleWidth(const Var& x, int height, int width, int factor) {
  const Matrix& X = x.value();
  if (X.rows() != Index(height) * width) {
    throw Error(ErrorCode::kShapeMismatch, "UpsampleWidth: map size");
  }
  const int out_w = width * factor;
  Matrix out(Index(height) * out_w, X.cols());
  for (int h = 0; h < height; ++h) {
    for (int wo = 0; wo < out_w; ++wo) {
      out.row(Index(h) * out_w + wo) = X.row(Index(h) * width + wo / factor);
    }
  }
  return MakeOp(std::move(out), {x}, [height, width, factor](Node& self) {
    const int out_w = width * factor;
    Matrix dx = Matrix::Zero(Index(height) * width, self.grad.cols());
    for (int h = 0; h < height; ++h) {
      for (int wo = 0; wo < out_w; ++wo) {
        dx.row(Index(h) * width + wo / factor) +=
            self.grad.row(Index(h) * out_w + wo);
      }
    }
    self.inputs[0]->AccumulateGrad(dx);
  });
}

Var Reshape(const Var& x, Index rows, Index cols) {
  if (rows * cols != x.value().size()) {
    throw Error(ErrorCode::kShapeMismatch, "Reshape: element count");
  }
  const Index in_rows = x.rows();
  const Index in_cols = x.cols();
  Matrix out = Eigen::Map<const Matrix>(x.value().data(), rows, cols);
  return MakeOp(std::move(out), {x}, [in_rows, in_cols](Node& self) {
    self.inputs[0]->AccumulateGrad(
        Eigen::Map<const Matrix>(self.grad.data(), in_rows, in_cols));
  });
}

Var GatherRows(const Var& table, const std::vector<int>& index) {
  const Matrix& W = table.value();
  Matrix out(static_cast<Index>(index.size()), W.cols());
  for (size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= W.rows()) {
      throw Error(ErrorCode::kShapeMismatch, "GatherRows: index out of range");
    }
    out.row(i) = W.row(index[i]);
  }
  return MakeOp(std::move(out), {table}, [index](Node& self) {
    const Matrix& W = self.inputs[0]->val();
    Matrix g = Matrix::Zero(W.rows(), W.cols());
    for (size_t i = 0; i < index.size(); ++i) g.row(index[i]) += self.grad.row(i);
    self.inputs[0]->AccumulateGrad(g);
  });
}

Var RepeatRows(const Var& x, const std::vector<int>& counts) {
  const Matrix& X = x.value();
  if (static_cast<Index>(counts.size()) != X.rows()) {
    throw Error(ErrorCode::kShapeMismatch, "RepeatRows: count length");
  }
  Index total = 0;
  for (int c : counts) {
    if (c < 0) throw Error(ErrorCode::kShapeMismatch, "RepeatRows: negative");
    total += c;
  }
  Matrix out(total, X.cols());
  Index r = 0;
  for (size_t i = 0; i < counts.size(); ++i) {
    for (int k = 0; k < counts[i]; ++k) out.row(r++) = X.row(i);
  }
  return MakeOp(std::move(out), {x}, [counts](Node& self) {
    Matrix g = Matrix::Zero(static_cast<Index>(counts.size()), self.grad.cols());
    Index r = 0;
    for (size_t i = 0; i < counts.size(); ++i) {
      for (int k = 0; k < counts[i]; ++k) g.row(i) += self.grad.row(r++);
    }
    self.inputs[0]->AccumulateGrad(g);
  });
}

Var SliceRows(const Var& x, Index start, Index n) {
  if (start < 0 || start + n > x.rows()) {
    throw Error(ErrorCode::kShapeMismatch, "SliceRows: range");
  }
  Matrix out = x.value().middleRows(start, n);
  return MakeOp(std::move(out), {x}, [start, n](Node& self) {
    const Matrix& X = self.inputs[0]->val();
    Matrix g = Matrix::Zero(X.rows(), X.cols());
    g.middleRows(start, n) = self.grad;
    self.inputs[0]->AccumulateGrad(g);
  });
}

Var SliceCols(const Var& x, Index start, Index n) {
  if (start < 0 || start + n > x.cols()) {
    throw Error(ErrorCode::kShapeMismatch, "SliceCols: range");
  }
  Matrix out = x.value().middleCols(start, n);
  return MakeOp(std::move(out), {x}, [start, n](Node& self) {
    const Matrix& X = self.inputs[0]->val();
    Matrix g = Matrix::Zero(X.rows(), X.cols());
    g.middleCols(start, n) = self.grad;
    self.inputs[0]->AccumulateGrad(g);
  });
}

Var HCat(const std::vector<Var>& parts) {
  if (parts.empty()) throw Error(ErrorCode::kShapeMismatch, "HCat: empty");
  const Index rows = parts[0].rows();
  Index cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw Error(ErrorCode::kShapeMismatch, "HCat: rows");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<Index> widths;
  Index c = 0;
  for (const Var& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    widths.push_back(p.cols());
    c += p.cols();
  }
  return MakeOp(std::move(out), parts, [widths](Node& self) {
    Index c = 0;
    for (size_t i = 0; i < widths.size(); ++i) {
      if (Needs(self, i)) {
        self.inputs[i]->AccumulateGrad(self.grad.middleCols(c, widths[i]));
      }
      c += widths[i];
    }
  });
}

Var VCat(const std::vector<Var>& parts) {
  if (parts.empty()) throw Error(ErrorCode::kShapeMismatch, "VCat: empty");
  const Index cols = parts[0].cols();
  Index rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols) throw Error(ErrorCode::kShapeMismatch, "VCat: cols");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::vector<Index> heights;
  Index r = 0;
  for (const Var& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    heights.push_back(p.rows());
    r += p.rows();
  }
  return MakeOp(std::move(out), parts, [heights](Node& self) {
    Index r = 0;
    for (size_t i = 0; i < heights.size(); ++i) {
      if (Needs(self, i)) {
        self.inputs[i]->AccumulateGrad(self.grad.middleRows(r, heights[i]));
      }
      r += heights[i];
    }
  });
}

Var Detach(const Var& x) { return Constant(x.value()); }

Var StraightThrough(const Var& z, const Var& zq) {
  CheckShape(z.rows() == zq.rows() && z.cols() == zq.cols(), "StraightThrough",
             z.value(), zq.value());
  return MakeOp(zq.value(), {z}, [](Node& self) {
    self.inputs[0]->AccumulateGrad(self.grad);
  });
}

Var MseLoss(const Var& pred, const Var& target) {
  return Mean(Mul(Sub(pred, target), Sub(pred, target)));
}

Var L1Loss(const Var& pred, const Var& target) {
  CheckShape(pred.rows() == target.rows() && pred.cols() == target.cols(),
             "L1Loss", pred.value(), target.value());
  const Matrix diff = pred.value() - target.value();
  const double n = static_cast<double>(diff.size());
  Matrix out(1, 1);
  out(0, 0) = diff.cwiseAbs().sum() / n;
  return MakeOp(std::move(out), {pred, target}, [diff, n](Node& self) {
    const Matrix sign = diff.unaryExpr([](double v) {
      return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
    });
    const double s = self.grad(0, 0) / n;
    if (Needs(self, 0)) self.inputs[0]->AccumulateGrad(sign * s);
    if (Needs(self, 1)) self.inputs[1]->AccumulateGrad(sign * -s);
  });
}

}  // namespace ag
}  // namespace duopath
