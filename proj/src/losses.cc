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

#include "advtts/losses.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace advtts {

void LossWeights::validate() const {
  if (lambda_d < 0 || lambda_p < 0 || lambda_e < 0 || lambda_fm_cap < 0) {
    throw std::invalid_argument("LossWeights: weights must be non-negative");
  }
}

ReconLoss recon_loss(const GeneratorOutput& out, const ReconTargets& target,
                     const LossWeights& w) {
  auto check = [](const ad::Var& pred, const ad::Matrix& tgt, const char* what) {
    if (pred.rows() != tgt.rows() || pred.cols() != tgt.cols()) {
      throw std::invalid_argument(std::string("recon_loss: shape mismatch in ") +
                                  what);
    }
  };
  check(out.mel, target.mel, "mel");
  check(out.log_dur, target.log_dur, "duration");
  check(out.pitch, target.pitch, "pitch");
  check(out.energy, target.energy, "energy");
  ReconLoss l;
  l.mel = ad::l1_loss(out.mel, ad::constant(target.mel));
  l.duration = ad::mse_loss(out.log_dur, ad::constant(target.log_dur));
  l.pitch = ad::mse_loss(out.pitch, ad::constant(target.pitch));
  l.energy = ad::mse_loss(out.energy, ad::constant(target.energy));
  l.total = ad::add(
      ad::add(l.mel, ad::scale(l.duration, w.lambda_d)),
      ad::add(ad::scale(l.pitch, w.lambda_p), ad::scale(l.energy, w.lambda_e)));
  return l;
}

ad::Var d_loss_jcu(const JcuOutput& real, const JcuOutput& fake) {
  if (real.uncond.rows() != fake.uncond.rows() ||
      real.cond.rows() != fake.cond.rows()) {
    throw std::invalid_argument("d_loss_jcu: score map shape mismatch");
  }
  const ad::Var fake_term =
      ad::add(ad::mse_to_const(fake.uncond, 0.0), ad::mse_to_const(fake.cond, 0.0));
  const ad::Var real_term =
      ad::add(ad::mse_to_const(real.uncond, 1.0), ad::mse_to_const(real.cond, 1.0));
  return ad::scale(ad::add(fake_term, real_term), 0.5);
}

ad::Var g_adv_loss(const JcuOutput& fake) {
  return ad::scale(
      ad::add(ad::mse_to_const(fake.uncond, 1.0), ad::mse_to_const(fake.cond, 1.0)),
      0.5);
}

ad::Var feature_matching(std::span<const ad::Var> real,
                         std::span<const ad::Var> fake) {
  if (real.size() != fake.size() || real.empty()) {
    throw std::invalid_argument("feature_matching: layer count mismatch");
  }
  ad::Var total;
  for (size_t t = 0; t < real.size(); ++t) {
    if (real[t].rows() != fake[t].rows() || real[t].cols() != fake[t].cols()) {
      throw std::invalid_argument("feature_matching: shape mismatch at layer " +
                                  std::to_string(t));
    }
    const ad::Var layer = ad::l1_loss(real[t], fake[t]);
    total = total.valid() ? ad::add(total, layer) : layer;
  }
  return total;
}

double fm_scale(double l_recon, double l_fm, double cap) {
  if (!(l_fm > 0.0)) return 0.0;
  return std::clamp(l_recon / l_fm, 0.0, cap);
}

ad::Var g_total_loss(const ad::Var& l_g_adv, double lambda_fm,
                     const ad::Var& l_fm, const ad::Var& l_recon) {
  return ad::add(ad::add(l_g_adv, ad::scale(l_fm, lambda_fm)), l_recon);
}

double g_total_loss(double l_g_adv, double lambda_fm, double l_fm,
                    double l_recon) {
  return l_g_adv + lambda_fm * l_fm + l_recon;
}

}  // namespace advtts
