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

// Training objectives: reconstruction, least-squares joint adversarial losses,
// feature matching, and the per-step feature-matching weight.

#pragma once

#include <span>

#include "advtts/autodiff.h"
#include "advtts/discriminator.h"
#include "advtts/generator.h"

namespace advtts {

struct LossWeights {
  double lambda_d = 1.0;
  double lambda_p = 1.0;
  double lambda_e = 1.0;
  double lambda_fm_cap = 1e4;

  void validate() const;
};

struct ReconLoss {
  ad::Var total;  // l_mel + λd·l_dur + λp·l_pitch + λe·l_energy
  ad::Var mel;
  ad::Var duration;
  ad::Var pitch;
  ad::Var energy;
};

// One step's scalar losses. Fields that do not apply to a stage stay 0.
struct LossReport {
  long step = 0;
  int stage = 1;
  double l_mel = 0.0;
  double l_dur = 0.0;
  double l_pitch = 0.0;
  double l_energy = 0.0;
  double l_recon = 0.0;
  double l_d = 0.0;
  double l_g_adv = 0.0;
  double l_fm = 0.0;
  double lambda_fm = 0.0;
  double l_g_total = 0.0;
  double lr = 0.0;
  bool lambda_clamped = false;
};

// L1 on mel, mean squared error on log(d + 1), pitch and energy.
ReconLoss recon_loss(const GeneratorOutput& out, const ReconTargets& target,
                     const LossWeights& w);

// ½·mean[D(x̂)² + D(x̂,s)²] + ½·mean[(D(x)−1)² + (D(x,s)−1)²]
ad::Var d_loss_jcu(const JcuOutput& real, const JcuOutput& fake);
// ½·mean[(D(x̂)−1)² + (D(x̂,s)−1)²]
ad::Var g_adv_loss(const JcuOutput& fake);
// Sum over layers of the mean absolute feature difference. Callers pass
// detached real features when only the generator should receive gradient.
ad::Var feature_matching(std::span<const ad::Var> real,
                         std::span<const ad::Var> fake);

// l_recon / l_fm clamped to [0, cap]; 0 when l_fm is 0. The result is a plain
// number and carries no gradient.
double fm_scale(double l_recon, double l_fm, double cap);

ad::Var g_total_loss(const ad::Var& l_g_adv, double lambda_fm,
                     const ad::Var& l_fm, const ad::Var& l_recon);
double g_total_loss(double l_g_adv, double lambda_fm, double l_fm,
                    double l_recon);

}  // namespace advtts
