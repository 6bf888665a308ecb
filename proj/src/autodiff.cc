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

#include "advtts/autodiff.h"

#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace advtts::ad {
namespace {

void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

Var make(Matrix value, std::vector<std::shared_ptr<Node>> parents,
         std::function<void(Node&)> fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  for (const auto& p : parents) {
    if (p->requires_grad) {
      node->requires_grad = true;
      break;
    }
  }
  if (node->requires_grad) {
    node->parents = std::move(parents);
    node->backward_fn = std::move(fn);
  }
  return Var(std::move(node));
}

Var scalar_var(double v, std::vector<std::shared_ptr<Node>> parents,
               std::function<void(Node&)> fn) {
  Matrix m(1, 1);
  m(0, 0) = v;
  return make(std::move(m), std::move(parents), std::move(fn));
}

}  // namespace

void Node::accumulate(const Matrix& g) {
  if (grad.size() == 0) {
    grad = g;
  } else {
    grad += g;
  }
}

Matrix Var::grad() const {
  if (node_->grad.size() == 0) {
    return Matrix::Zero(node_->value.rows(), node_->value.cols());
  }
  return node_->grad;
}

Var parameter(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Var(std::move(node));
}

Var constant(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var detach(const Var& x) { return constant(x.value()); }

void backward(const Var& root) {
  require(root.rows() == 1 && root.cols() == 1, "backward: root must be 1x1");
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a reverse topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(root.node(), 0);
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node* n : order) {
    if (!n->parents.empty()) n->grad.resize(0, 0);
  }
  root.node()->accumulate(Matrix::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->grad.size() != 0) n->backward_fn(*n);
  }
}

Var add(const Var& a, const Var& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  auto pa = a.shared(), pb = b.shared();
  return make(a.value() + b.value(), {pa, pb}, [pa, pb](Node& self) {
    if (pa->requires_grad) pa->accumulate(self.grad);
    if (pb->requires_grad) pb->accumulate(self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
  auto pa = a.shared(), pb = b.shared();
  return make(a.value() - b.value(), {pa, pb}, [pa, pb](Node& self) {
    if (pa->requires_grad) pa->accumulate(self.grad);
    if (pb->requires_grad) pb->accumulate(-self.grad);
  });
}

Var mul(const Var& a, const Var& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "mul: shape mismatch");
  auto pa = a.shared(), pb = b.shared();
  return make(a.value().cwiseProduct(b.value()), {pa, pb},
              [pa, pb](Node& self) {
                if (pa->requires_grad)
                  pa->accumulate(self.grad.cwiseProduct(pb->value));
                if (pb->requires_grad)
                  pb->accumulate(self.grad.cwiseProduct(pa->value));
              });
}

Var scale(const Var& a, double s) {
  auto pa = a.shared();
  return make(a.value() * s, {pa},
              [pa, s](Node& self) { pa->accumulate(self.grad * s); });
}

Var add_scalar(const Var& a, double s) {
  auto pa = a.shared();
  return make(a.value().array() + s, {pa},
              [pa](Node& self) { pa->accumulate(self.grad); });
}

Var add_row(const Var& a, const Var& row) {
  require(row.rows() == 1 && row.cols() == a.cols(), "add_row: shape mismatch");
  auto pa = a.shared(), pr = row.shared();
  Matrix out = a.value();
  out.rowwise() += row.value().row(0);
  return make(std::move(out), {pa, pr}, [pa, pr](Node& self) {
    if (pa->requires_grad) pa->accumulate(self.grad);
    if (pr->requires_grad) pr->accumulate(self.grad.colwise().sum());
  });
}

Var broadcast_rows(const Var& row, Eigen::Index rows) {
  require(row.rows() == 1, "broadcast_rows: expects a single row");
  auto pr = row.shared();
  Matrix out = row.value().replicate(rows, 1);
  return make(std::move(out), {pr}, [pr](Node& self) {
    pr->accumulate(self.grad.colwise().sum());
  });
}

Var matmul(const Var& a, const Var& b) {
  require(a.cols() == b.rows(), "matmul: inner dimension mismatch");
  auto pa = a.shared(), pb = b.shared();
  Matrix out = a.value() * b.value();
  return make(std::move(out), {pa, pb}, [pa, pb](Node& self) {
    if (pa->requires_grad) pa->accumulate(self.grad * pb->value.transpose());
    if (pb->requires_grad) pb->accumulate(pa->value.transpose() * self.grad);
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  require(a.cols() == b.cols(), "matmul_nt: inner dimension mismatch");
  auto pa = a.shared(), pb = b.shared();
  Matrix out = a.value() * b.value().transpose();
  return make(std::move(out), {pa, pb}, [pa, pb](Node& self) {
    if (pa->requires_grad) pa->accumulate(self.grad * pb->value);
    if (pb->requires_grad) pb->accumulate(self.grad.transpose() * pa->value);
  });
}

Var relu(const Var& x) {
  auto px = x.shared();
  Matrix out = x.value().cwiseMax(0.0);
  return make(std::move(out), {px}, [px](Node& self) {
    Matrix g = (px->value.array() > 0.0).select(self.grad, 0.0);
    px->accumulate(g);
  });
}

Var leaky_relu(const Var& x, double slope) {
  auto px = x.shared();
  Matrix out = (x.value().array() > 0.0).select(x.value(), x.value() * slope);
  return make(std::move(out), {px}, [px, slope](Node& self) {
    Matrix g =
        (px->value.array() > 0.0).select(self.grad, self.grad * slope);
    px->accumulate(g);
  });
}

Var softmax_rows(const Var& x) {
  auto px = x.shared();
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double m = x.value().row(r).maxCoeff();
    Eigen::RowVectorXd e = (x.value().row(r).array() - m).exp().matrix();
    out.row(r) = e / e.sum();
  }
  auto y = std::make_shared<Matrix>(out);
  return make(std::move(out), {px}, [px, y](Node& self) {
    // dx = y * (g - sum(g * y))
    Matrix g(y->rows(), y->cols());
    for (Eigen::Index r = 0; r < y->rows(); ++r) {
      const double dot = self.grad.row(r).dot(y->row(r));
      g.row(r) = y->row(r).array() * (self.grad.row(r).array() - dot);
    }
    px->accumulate(g);
  });
}

Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta,
                    double eps) {
  require(gamma.rows() == 1 && gamma.cols() == x.cols() &&
              beta.rows() == 1 && beta.cols() == x.cols(),
          "layer_norm_rows: gain/bias shape mismatch");
  const Eigen::Index n = x.cols();
  auto xhat = std::make_shared<Matrix>(x.rows(), n);
  auto inv_std = std::make_shared<Eigen::VectorXd>(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mu = x.value().row(r).mean();
    const double var =
        (x.value().row(r).array() - mu).square().sum() / static_cast<double>(n);
    (*inv_std)(r) = 1.0 / std::sqrt(var + eps);
    xhat->row(r) = (x.value().row(r).array() - mu) * (*inv_std)(r);
  }
  Matrix out = *xhat;
  out.array().rowwise() *= gamma.value().row(0).array();
  out.rowwise() += beta.value().row(0);
  auto px = x.shared(), pg = gamma.shared(), pb = beta.shared();
  return make(std::move(out), {px, pg, pb},
              [px, pg, pb, xhat, inv_std, n](Node& self) {
                if (pg->requires_grad)
                  pg->accumulate(
                      self.grad.cwiseProduct(*xhat).colwise().sum());
                if (pb->requires_grad) pb->accumulate(self.grad.colwise().sum());
                if (!px->requires_grad) return;
                Matrix dxhat = self.grad;
                dxhat.array().rowwise() *= pg->value.row(0).array();
                Matrix dx(dxhat.rows(), n);
                const double inv_n = 1.0 / static_cast<double>(n);
                for (Eigen::Index r = 0; r < dxhat.rows(); ++r) {
                  const double s1 = dxhat.row(r).sum();
                  const double s2 = dxhat.row(r).dot(xhat->row(r));
                  dx.row(r) = (*inv_std)(r) *
                              (dxhat.row(r).array() - inv_n * s1 -
                               xhat->row(r).array() * (inv_n * s2));
                }
                px->accumulate(dx);
              });
}

Var concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::vector<Eigen::Index> offsets;
  for (const Var& p : parts) {
    require(p.rows() == rows, "concat_cols: row mismatch");
    offsets.push_back(cols);
    cols += p.cols();
    parents.push_back(p.shared());
  }
  Matrix out(rows, cols);
  for (size_t i = 0; i < parts.size(); ++i) {
    out.middleCols(offsets[i], parts[i].cols()) = parts[i].value();
  }
  auto ps = parents;
  return make(std::move(out), std::move(parents),
              [ps, offsets](Node& self) {
                for (size_t i = 0; i < ps.size(); ++i) {
                  if (!ps[i]->requires_grad) continue;
                  ps[i]->accumulate(
                      self.grad.middleCols(offsets[i], ps[i]->value.cols()));
                }
              });
}

Var slice_cols(const Var& x, Eigen::Index start, Eigen::Index count) {
  require(start >= 0 && count >= 0 && start + count <= x.cols(),
          "slice_cols: range out of bounds");
  auto px = x.shared();
  Matrix out = x.value().middleCols(start, count);
  return make(std::move(out), {px}, [px, start, count](Node& self) {
    Matrix g = Matrix::Zero(px->value.rows(), px->value.cols());
    g.middleCols(start, count) = self.grad;
    px->accumulate(g);
  });
}

Var window_rows(const Var& x, Eigen::Index start, Eigen::Index count) {
  require(count >= 0, "window_rows: negative count");
  auto px = x.shared();
  const Eigen::Index lo = std::max<Eigen::Index>(start, 0);
  const Eigen::Index hi = std::min<Eigen::Index>(start + count, x.rows());
  Matrix out = Matrix::Zero(count, x.cols());
  if (hi > lo) out.middleRows(lo - start, hi - lo) = x.value().middleRows(lo, hi - lo);
  return make(std::move(out), {px}, [px, start, lo, hi](Node& self) {
    Matrix g = Matrix::Zero(px->value.rows(), px->value.cols());
    if (hi > lo) g.middleRows(lo, hi - lo) = self.grad.middleRows(lo - start, hi - lo);
    px->accumulate(g);
  });
}

Var gather_rows(const Var& table, std::span<const int> index) {
  Matrix out(static_cast<Eigen::Index>(index.size()), table.cols());
  for (size_t i = 0; i < index.size(); ++i) {
    require(index[i] >= 0 && index[i] < table.rows(),
            "gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(i)) = table.value().row(index[i]);
  }
  auto pt = table.shared();
  std::vector<int> idx(index.begin(), index.end());
  return make(std::move(out), {pt}, [pt, idx](Node& self) {
    Matrix g = Matrix::Zero(pt->value.rows(), pt->value.cols());
    for (size_t i = 0; i < idx.size(); ++i) {
      g.row(idx[i]) += self.grad.row(static_cast<Eigen::Index>(i));
    }
    pt->accumulate(g);
  });
}

Var reshape(const Var& x, Eigen::Index rows, Eigen::Index cols) {
  require(rows * cols == x.rows() * x.cols(), "reshape: size mismatch");
  auto px = x.shared();
  Matrix out = Eigen::Map<const Matrix>(x.value().data(), rows, cols);
  return make(std::move(out), {px}, [px](Node& self) {
    px->accumulate(Eigen::Map<const Matrix>(
        self.grad.data(), px->value.rows(), px->value.cols()));
  });
}

Var mask_mul(const Var& x, Matrix mask) {
  require(mask.rows() == x.rows() && mask.cols() == x.cols(),
          "mask_mul: shape mismatch");
  auto px = x.shared();
  Matrix out = x.value().cwiseProduct(mask);
  return make(std::move(out), {px}, [px, m = std::move(mask)](Node& self) {
    px->accumulate(self.grad.cwiseProduct(m));
  });
}

Eigen::Index conv1d_out_len(Eigen::Index len, int stride) {
  return (len + stride - 1) / stride;
}

Eigen::Index conv1d_pad_left(Eigen::Index len, int kernel, int stride) {
  const Eigen::Index out = conv1d_out_len(len, stride);
  const Eigen::Index total =
      std::max<Eigen::Index>((out - 1) * stride + kernel - len, 0);
  return total / 2;
}

Var conv1d(const Var& x, const Var& weight, const Var& bias, int kernel,
           int stride) {
  const Eigen::Index len = x.rows();
  const Eigen::Index in_ch = x.cols();
  require(kernel >= 1 && stride >= 1, "conv1d: bad kernel/stride");
  require(weight.rows() == kernel * in_ch, "conv1d: weight rows mismatch");
  require(bias.rows() == 1 && bias.cols() == weight.cols(),
          "conv1d: bias shape mismatch");
  const Eigen::Index out_len = conv1d_out_len(len, stride);
  const Eigen::Index pad = conv1d_pad_left(len, kernel, stride);

  // im2col: row o holds taps [o*stride - pad, ... + kernel) concatenated.
  auto cols = std::make_shared<Matrix>(Matrix::Zero(out_len, kernel * in_ch));
  for (Eigen::Index o = 0; o < out_len; ++o) {
    for (int k = 0; k < kernel; ++k) {
      const Eigen::Index t = o * stride - pad + k;
      if (t < 0 || t >= len) continue;
      cols->block(o, k * in_ch, 1, in_ch) = x.value().row(t);
    }
  }
  Matrix out = (*cols) * weight.value();
  out.rowwise() += bias.value().row(0);
  auto px = x.shared(), pw = weight.shared(), pb = bias.shared();
  return make(std::move(out), {px, pw, pb},
              [px, pw, pb, cols, kernel, stride, pad, len,
               in_ch](Node& self) {
                if (pw->requires_grad)
                  pw->accumulate(cols->transpose() * self.grad);
                if (pb->requires_grad) pb->accumulate(self.grad.colwise().sum());
                if (!px->requires_grad) return;
                Matrix dcols = self.grad * pw->value.transpose();
                Matrix dx = Matrix::Zero(len, in_ch);
                for (Eigen::Index o = 0; o < dcols.rows(); ++o) {
                  for (int k = 0; k < kernel; ++k) {
                    const Eigen::Index t = o * stride - pad + k;
                    if (t < 0 || t >= len) continue;
                    dx.row(t) += dcols.block(o, k * in_ch, 1, in_ch);
                  }
                }
                px->accumulate(dx);
              });
}

Var sum(const Var& x) {
  auto px = x.shared();
  return scalar_var(x.value().sum(), {px}, [px](Node& self) {
    px->accumulate(Matrix::Constant(px->value.rows(), px->value.cols(),
                                    self.grad(0, 0)));
  });
}

Var mean(const Var& x) {
  const double n = static_cast<double>(x.value().size());
  require(n > 0, "mean: empty input");
  auto px = x.shared();
  return scalar_var(x.value().sum() / n, {px}, [px, n](Node& self) {
    px->accumulate(Matrix::Constant(px->value.rows(), px->value.cols(),
                                    self.grad(0, 0) / n));
  });
}

Var l1_loss(const Var& a, const Var& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(),
          "l1_loss: shape mismatch");
  const double n = static_cast<double>(a.value().size());
  require(n > 0, "l1_loss: empty input");
  auto pa = a.shared(), pb = b.shared();
  auto diff = std::make_shared<Matrix>(a.value() - b.value());
  return scalar_var(diff->cwiseAbs().sum() / n, {pa, pb},
                    [pa, pb, diff, n](Node& self) {
                      Matrix g = diff->array().sign() * (self.grad(0, 0) / n);
                      if (pa->requires_grad) pa->accumulate(g);
                      if (pb->requires_grad) pb->accumulate(-g);
                    });
}

Var mse_loss(const Var& a, const Var& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(),
          "mse_loss: shape mismatch");
  const double n = static_cast<double>(a.value().size());
  require(n > 0, "mse_loss: empty input");
  auto pa = a.shared(), pb = b.shared();
  auto diff = std::make_shared<Matrix>(a.value() - b.value());
  return scalar_var(diff->squaredNorm() / n, {pa, pb},
                    [pa, pb, diff, n](Node& self) {
                      Matrix g = *diff * (2.0 * self.grad(0, 0) / n);
                      if (pa->requires_grad) pa->accumulate(g);
                      if (pb->requires_grad) pb->accumulate(-g);
                    });
}

Var mse_to_const(const Var& x, double target) {
  const double n = static_cast<double>(x.value().size());
  require(n > 0, "mse_to_const: empty input");
  auto px = x.shared();
  auto diff = std::make_shared<Matrix>(x.value().array() - target);
  return scalar_var(diff->squaredNorm() / n, {px}, [px, diff, n](Node& self) {
    px->accumulate(*diff * (2.0 * self.grad(0, 0) / n));
  });
}

}  // namespace advtts::ad
