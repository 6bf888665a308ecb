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

#include "advtts/discriminator.h"

#include <stdexcept>

namespace advtts {

void DiscriminatorConfig::validate() const {
  if (shared_channels.size() != shared_kernels.size() ||
      shared_channels.size() != shared_strides.size() ||
      head_channels.size() != head_kernels.size() ||
      head_channels.size() != head_strides.size()) {
    throw std::invalid_argument(
        "DiscriminatorConfig: channel/kernel/stride lists differ in length");
  }
  if (shared_channels.empty() || head_channels.empty()) {
    throw std::invalid_argument("DiscriminatorConfig: empty layer list");
  }
  if (head_channels.back() != 1) {
    throw std::invalid_argument("DiscriminatorConfig: last head layer must emit 1 channel");
  }
  if (!(leaky_slope > 0.0 && leaky_slope < 1.0)) {
    throw std::invalid_argument("DiscriminatorConfig: leaky_slope must be in (0, 1)");
  }
  if (in_channels <= 0 || cond_proj_dim <= 0 || speaker_dim <= 0) {
    throw std::invalid_argument("DiscriminatorConfig: sizes must be positive");
  }
}

int DiscriminatorConfig::min_frames() const {
  int stride = 1;
  for (int s : shared_strides) stride *= s;
  for (int s : head_strides) stride *= s;
  return 4 * stride;
}

Discriminator::Discriminator(const DiscriminatorConfig& cfg, uint64_t seed)
    : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  int in = cfg_.in_channels;
  for (size_t i = 0; i < cfg_.shared_channels.size(); ++i) {
    shared_.emplace_back(in, cfg_.shared_channels[i], cfg_.shared_kernels[i],
                         cfg_.shared_strides[i], rng);
    in = cfg_.shared_channels[i];
  }
  const int trunk = in;
  for (size_t i = 0; i < cfg_.head_channels.size(); ++i) {
    uncond_head_.emplace_back(in, cfg_.head_channels[i], cfg_.head_kernels[i],
                              cfg_.head_strides[i], rng);
    in = cfg_.head_channels[i];
  }
  cond_proj_ = nn::Linear(cfg_.speaker_dim, cfg_.cond_proj_dim, rng);
  in = trunk + cfg_.cond_proj_dim;
  for (size_t i = 0; i < cfg_.head_channels.size(); ++i) {
    cond_head_.emplace_back(in, cfg_.head_channels[i], cfg_.head_kernels[i],
                            cfg_.head_strides[i], rng);
    in = cfg_.head_channels[i];
  }
}

int Discriminator::cond_input_channels() const {
  return static_cast<int>(cond_head_.front().weight.rows()) /
         cond_head_.front().kernel;
}

JcuOutput Discriminator::discriminate(const ad::Var& mel,
                                      const ad::Var& speaker_emb) const {
  if (mel.cols() != cfg_.in_channels) {
    throw std::invalid_argument("discriminate: expected " +
                                std::to_string(cfg_.in_channels) +
                                " mel channels");
  }
  if (mel.rows() < cfg_.min_frames()) {
    throw std::invalid_argument("discriminate: window too short");
  }
  if (speaker_emb.rows() != 1 || speaker_emb.cols() != cfg_.speaker_dim) {
    throw std::invalid_argument("discriminate: speaker embedding shape mismatch");
  }
  const double slope = cfg_.leaky_slope;
  JcuOutput out;
  ad::Var x = mel;
  for (const auto& conv : shared_) {
    x = ad::leaky_relu(conv(x), slope);
    out.features.push_back(x);
  }
  const ad::Var trunk = x;

  ad::Var u = trunk;
  for (size_t i = 0; i < uncond_head_.size(); ++i) {
    u = uncond_head_[i](u);
    if (i + 1 < uncond_head_.size()) u = ad::leaky_relu(u, slope);
    out.features.push_back(u);
  }
  out.uncond = u;

  const ad::Var cond =
      ad::leaky_relu(cond_proj_(speaker_emb), slope);
  const ad::Var parts[2] = {trunk, ad::broadcast_rows(cond, trunk.rows())};
  ad::Var c = ad::concat_cols(parts);
  for (size_t i = 0; i < cond_head_.size(); ++i) {
    c = cond_head_[i](c);
    if (i + 1 < cond_head_.size()) c = ad::leaky_relu(c, slope);
  }
  out.cond = c;
  return out;
}

nn::ParamList Discriminator::parameters() const {
  nn::ParamList out;
  for (size_t i = 0; i < shared_.size(); ++i) {
    shared_[i].collect("disc.shared." + std::to_string(i), out);
  }
  for (size_t i = 0; i < uncond_head_.size(); ++i) {
    uncond_head_[i].collect("disc.uncond." + std::to_string(i), out);
  }
  cond_proj_.collect("disc.cond_proj", out);
  for (size_t i = 0; i < cond_head_.size(); ++i) {
    cond_head_[i].collect("disc.cond." + std::to_string(i), out);
  }
  return out;
}

CropResult crop_pair(const ad::Var& real, const ad::Var& fake, int window,
                     Rng& rng) {
  if (real.rows() != fake.rows() || real.cols() != fake.cols()) {
    throw std::invalid_argument("crop_pair: real/fake length mismatch");
  }
  if (window <= 0) throw std::invalid_argument("crop_pair: window must be positive");
  CropResult r;
  const int frames = static_cast<int>(real.rows());
  r.offset = frames > window ? rng.uniform_int(0, frames - window) : 0;
  r.real = ad::window_rows(real, r.offset, window);
  r.fake = ad::window_rows(fake, r.offset, window);
  return r;
}

}  // namespace advtts
