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

// Small layer building blocks shared by the generator and discriminator.

#pragma once

#include <string>
#include <vector>

#include "advtts/autodiff.h"
#include "advtts/rng.h"

namespace advtts::nn {

struct NamedParam {
  std::string name;
  ad::Var var;
};
using ParamList = std::vector<NamedParam>;

// Uniform(-bound, bound) init rounded onto the float32 grid so parameters
// survive checkpoint serialization exactly.
ad::Matrix uniform_init(Eigen::Index rows, Eigen::Index cols, double bound,
                        Rng& rng);
void round_to_f32(ad::Matrix& m);

struct Linear {
  Linear() = default;
  Linear(int in, int out, Rng& rng);
  ad::Var operator()(const ad::Var& x) const;
  void collect(const std::string& prefix, ParamList& out) const;

  ad::Var weight;  // in x out
  ad::Var bias;    // 1 x out
};

struct Conv1d {
  Conv1d() = default;
  Conv1d(int in, int out, int kernel, int stride, Rng& rng);
  ad::Var operator()(const ad::Var& x) const;
  void collect(const std::string& prefix, ParamList& out) const;

  ad::Var weight;  // (kernel * in) x out
  ad::Var bias;    // 1 x out
  int kernel = 1;
  int stride = 1;
};

struct LayerNorm {
  LayerNorm() = default;
  explicit LayerNorm(int dim);
  ad::Var operator()(const ad::Var& x) const;
  void collect(const std::string& prefix, ParamList& out) const;

  ad::Var gamma;
  ad::Var beta;
};

// Fixed sinusoidal position table, len x dim.
ad::Matrix sinusoid_positions(Eigen::Index len, Eigen::Index dim);

// Inverted dropout; identity when rng is null or rate is 0.
ad::Var dropout(const ad::Var& x, double rate, Rng* rng);

}  // namespace advtts::nn
