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

// Joint conditional / unconditional mel discriminator. Three shared strided
// convolutions feed an unconditional head and a speaker-conditioned head.

#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "advtts/autodiff.h"
#include "advtts/dataio.h"
#include "advtts/nn.h"
#include "advtts/rng.h"

namespace advtts {

struct DiscriminatorConfig {
  int in_channels = 80;
  std::vector<int> shared_channels = {64, 128, 512};
  std::vector<int> shared_kernels = {3, 5, 5};
  std::vector<int> shared_strides = {1, 2, 2};
  std::vector<int> head_channels = {128, 1};
  std::vector<int> head_kernels = {5, 3};
  std::vector<int> head_strides = {1, 1};
  double leaky_slope = 0.2;
  int cond_proj_dim = 64;
  int speaker_dim = 64;

  void validate() const;
  // Shortest accepted window: one frame per unit of total stride, twice over.
  int min_frames() const;
};

// Scores are T' x 1 (time-major); `features` holds the post-activation maps
// of the shared stack and the unconditional head followed by the raw
// unconditional score map.
struct JcuOutput {
  ad::Var uncond;
  ad::Var cond;
  std::vector<ad::Var> features;
};

class Discriminator {
 public:
  Discriminator(const DiscriminatorConfig& cfg, uint64_t seed);

  const DiscriminatorConfig& config() const { return cfg_; }

  // mel: T x in_channels window; speaker_emb: 1 x speaker_dim.
  JcuOutput discriminate(const ad::Var& mel, const ad::Var& speaker_emb) const;

  // Input channel count of the first conditional-head convolution.
  int cond_input_channels() const;

  nn::ParamList parameters() const;

  // Exposed for structural tests.
  const std::vector<nn::Conv1d>& shared() const { return shared_; }
  const std::vector<nn::Conv1d>& uncond_head() const { return uncond_head_; }
  const std::vector<nn::Conv1d>& cond_head() const { return cond_head_; }
  const nn::Linear& cond_proj() const { return cond_proj_; }

 private:
  DiscriminatorConfig cfg_;
  std::vector<nn::Conv1d> shared_;
  std::vector<nn::Conv1d> uncond_head_;
  nn::Linear cond_proj_;
  std::vector<nn::Conv1d> cond_head_;
};

// Same random offset for both inputs; inputs shorter than `window` are
// zero-padded at the end and start at offset 0.
struct CropResult {
  ad::Var real;
  ad::Var fake;
  int offset = 0;
};
CropResult crop_pair(const ad::Var& real, const ad::Var& fake, int window,
                     Rng& rng);

}  // namespace advtts
