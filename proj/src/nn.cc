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

#include "advtts/nn.h"

#include <cmath>

namespace advtts::nn {

ad::Matrix uniform_init(Eigen::Index rows, Eigen::Index cols, double bound,
                        Rng& rng) {
  ad::Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = rng.uniform(-bound, bound);
  }
  round_to_f32(m);
  return m;
}

void round_to_f32(ad::Matrix& m) {
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = static_cast<double>(static_cast<float>(m.data()[i]));
  }
}

Linear::Linear(int in, int out, Rng& rng)
    : weight(ad::parameter(
          uniform_init(in, out, std::sqrt(6.0 / (in + out)), rng))),
      bias(ad::parameter(ad::Matrix::Zero(1, out))) {}

ad::Var Linear::operator()(const ad::Var& x) const {
  return ad::add_row(ad::matmul(x, weight), bias);
}

void Linear::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

Conv1d::Conv1d(int in, int out, int kernel_size, int stride_size, Rng& rng)
    : weight(ad::parameter(uniform_init(
          kernel_size * in, out,
          std::sqrt(6.0 / (kernel_size * in + out)), rng))),
      bias(ad::parameter(ad::Matrix::Zero(1, out))),
      kernel(kernel_size),
      stride(stride_size) {}

ad::Var Conv1d::operator()(const ad::Var& x) const {
  return ad::conv1d(x, weight, bias, kernel, stride);
}

void Conv1d::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

LayerNorm::LayerNorm(int dim)
    : gamma(ad::parameter(ad::Matrix::Ones(1, dim))),
      beta(ad::parameter(ad::Matrix::Zero(1, dim))) {}

ad::Var LayerNorm::operator()(const ad::Var& x) const {
  return ad::layer_norm_rows(x, gamma, beta);
}

void LayerNorm::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".gamma", gamma});
  out.push_back({prefix + ".beta", beta});
}

ad::Matrix sinusoid_positions(Eigen::Index len, Eigen::Index dim) {
  ad::Matrix pe(len, dim);
  for (Eigen::Index t = 0; t < len; ++t) {
    for (Eigen::Index i = 0; i < dim; ++i) {
      const double rate =
          std::pow(10000.0, -2.0 * static_cast<double>(i / 2) /
                                static_cast<double>(dim));
      const double angle = static_cast<double>(t) * rate;
      pe(t, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

ad::Var dropout(const ad::Var& x, double rate, Rng* rng) {
  if (rng == nullptr || rate <= 0.0) return x;
  ad::Matrix mask(x.rows(), x.cols());
  const double keep = 1.0 / (1.0 - rate);
  for (Eigen::Index i = 0; i < mask.size(); ++i) {
    mask.data()[i] = rng->uniform() < rate ? 0.0 : keep;
  }
  return ad::mask_mul(x, std::move(mask));
}

}  // namespace advtts::nn
