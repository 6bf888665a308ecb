// Copyright 2026 The advtts Authors
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

// Minimal tape-free reverse-mode differentiation over dense row-major
// matrices. Sequences are laid out time-major: rows are positions (frames or
// phonemes), columns are channels.

#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace advtts::ad {

using Matrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Node {
  Matrix value;
  Matrix grad;  // Allocated on first accumulation.
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void accumulate(const Matrix& g);
};

// Handle to a graph node. Copies share the node.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  // Zero matrix of the value's shape if no gradient has reached this node.
  Matrix grad() const;
  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) const { node_->requires_grad = on; }
  void zero_grad() const { node_->grad.resize(0, 0); }
  bool has_grad() const { return node_->grad.size() != 0; }

  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  double scalar() const { return node_->value(0, 0); }
  bool valid() const { return static_cast<bool>(node_); }

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& shared() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Leaf holding learnable state; gradients accumulate across backward() calls
// until zero_grad().
Var parameter(Matrix value);
Var constant(Matrix value);
// New leaf sharing no history with `x`.
Var detach(const Var& x);

// Seeds d(root)/d(root) = 1 for a 1x1 root and propagates to every reachable
// node that requires grad.
void backward(const Var& root);

// Elementwise / structural ops.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
// a (R x C) + row (1 x C) broadcast over rows.
Var add_row(const Var& a, const Var& row);
// row (1 x C) repeated `rows` times.
Var broadcast_rows(const Var& row, Eigen::Index rows);
Var matmul(const Var& a, const Var& b);
// a * b^T
Var matmul_nt(const Var& a, const Var& b);
Var relu(const Var& x);
Var leaky_relu(const Var& x, double slope);
Var softmax_rows(const Var& x);
// Row-wise normalization with learnable 1 x C gain and bias.
Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta,
                    double eps = 1e-5);
Var concat_cols(std::span<const Var> parts);
Var slice_cols(const Var& x, Eigen::Index start, Eigen::Index count);
// Rows [start, start + count); rows outside the input read as zero.
Var window_rows(const Var& x, Eigen::Index start, Eigen::Index count);
// out.row(i) = table.row(index[i]); gradient scatters back.
Var gather_rows(const Var& table, std::span<const int> index);
// Row-major reinterpretation; rows * cols must match.
Var reshape(const Var& x, Eigen::Index rows, Eigen::Index cols);
// Multiplies by a fixed mask (dropout with pre-scaled keep mask).
Var mask_mul(const Var& x, Matrix mask);

// 1-D convolution over rows with "same" zero padding: output length is
// ceil(T / stride). `weight` is (kernel * in_ch) x out_ch with tap-major row
// blocks; `bias` is 1 x out_ch.
Var conv1d(const Var& x, const Var& weight, const Var& bias, int kernel,
           int stride);
// Output length and left padding used by conv1d.
Eigen::Index conv1d_out_len(Eigen::Index len, int stride);
Eigen::Index conv1d_pad_left(Eigen::Index len, int kernel, int stride);

// Reductions to 1 x 1.
Var sum(const Var& x);
Var mean(const Var& x);
// mean |a - b|
Var l1_loss(const Var& a, const Var& b);
// mean (a - b)^2
Var mse_loss(const Var& a, const Var& b);
// mean (x - target)^2 for a constant target
Var mse_to_const(const Var& x, double target);

}  // namespace advtts::ad
