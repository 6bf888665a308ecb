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

// Two-stage training: generator-only pretraining on the reconstruction loss,
// then joint adversarial training with the per-step feature-matching weight.

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "advtts/dataio.h"
#include "advtts/discriminator.h"
#include "advtts/generator.h"
#include "advtts/losses.h"
#include "advtts/nn.h"
#include "advtts/rng.h"

namespace advtts {

struct TrainConfig {
  int batch_size = 8;
  double lr = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.9;
  double eps = 1e-8;
  long lr_halve_every = 500;
  long stage1_steps = 500;
  long stage2_steps = 200;
  int d_window = 128;
  uint64_t seed = 1;
  std::filesystem::path log_path;  // empty: no log file
  std::filesystem::path ckpt_dir;  // empty: no checkpoint file
  // Constant λ_FM instead of the per-step ratio (ablation only).
  std::optional<double> fixed_fm;
  LossWeights weights;
  GeneratorConfig generator;
  DiscriminatorConfig discriminator;

  void validate() const;
};

// Learning rate for the 0-based step within a stage.
double learning_rate(const TrainConfig& cfg, long step);

// Adam with bias correction. Parameters and moments are rounded onto the
// float32 grid after each update so checkpoints hold the exact state.
class Adam {
 public:
  Adam(nn::ParamList params, double beta1, double beta2, double eps);

  // Uses the accumulated gradients; throws NumericError on a non-finite
  // gradient before touching any parameter.
  void step(double lr);
  void zero_grad();
  long steps_taken() const { return t_; }

  const nn::ParamList& params() const { return params_; }
  std::vector<ad::Matrix>& first_moments() { return m_; }
  std::vector<ad::Matrix>& second_moments() { return v_; }
  void set_steps_taken(long t) { t_ = t; }

 private:
  nn::ParamList params_;
  double beta1_, beta2_, eps_;
  std::vector<ad::Matrix> m_, v_;
  long t_ = 0;
};

struct NamedTensor {
  std::string name;
  std::vector<uint32_t> dims;
  std::vector<float> data;
};

// "GSCK" file: magic, u32 version, u32 count + entries (u32 name length, name
// bytes, u32 rank, u32 dims, f32 payload), optimizer entries in the same
// encoding, u64 step, u8 stage. All integers little-endian.
struct Checkpoint {
  std::vector<NamedTensor> tensors;
  std::vector<NamedTensor> optimizer;
  uint64_t step = 0;
  uint8_t stage = 1;

  const NamedTensor* find(const std::string& name) const;
  const NamedTensor* find_optimizer(const std::string& name) const;
  bool has_discriminator() const;
};

inline constexpr uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
// Throws DataError("corrupt checkpoint ...") with the failing byte offset.
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::unique_ptr<Generator> restore_generator(const Checkpoint& ckpt);
std::unique_ptr<Discriminator> restore_discriminator(const Checkpoint& ckpt);

// Appends one JSON object per report.
void append_log(std::ostream& os, const LossReport& r);

// Fixed batch schedule: the order within epoch e is a pure function of
// (seed, e).
class BatchSchedule {
 public:
  BatchSchedule(size_t n_items, int batch_size, uint64_t seed);
  std::vector<size_t> next();

 private:
  void reshuffle();
  size_t n_;
  int batch_;
  uint64_t seed_;
  long epoch_ = -1;
  std::vector<size_t> order_;
  size_t cursor_ = 0;
};

// Per-step quantities of a joint adversarial step, exposed so callers can
// inspect the two gradient phases separately.
struct AdversarialBatch {
  std::vector<GeneratorOutput> outputs;
  std::vector<ReconLoss> recon;
  std::vector<CropResult> windows;
  std::vector<ad::Var> speakers;  // detached condition vectors
};

class TrainingSession {
 public:
  // Fresh stage-1 session.
  TrainingSession(const TrainConfig& cfg, std::vector<Utterance> corpus,
                  int n_speakers);
  // Continues from a checkpoint and prepares stage-2 training. A stage-1
  // checkpoint gets a freshly initialized discriminator and fresh optimizer
  // moments; a stage-2 checkpoint restores both networks and optimizers.
  TrainingSession(const TrainConfig& cfg, std::vector<Utterance> corpus,
                  const Checkpoint& ckpt);

  LossReport stage1_step();
  LossReport stage2_step();

  // Stage-2 pieces, in the order stage2_step runs them.
  AdversarialBatch generator_forward(std::span<const size_t> batch);
  // Zeroes all gradients, then backpropagates the discriminator loss with
  // generator outputs detached. Returns l_d.
  double accumulate_discriminator_grads(AdversarialBatch& b);
  // Zeroes all gradients, then backpropagates Eq. 5 with the discriminator
  // frozen. Fills every LossReport field except step/lr/l_d.
  LossReport accumulate_generator_grads(AdversarialBatch& b);

  Checkpoint checkpoint() const;

  Generator& generator() { return *gen_; }
  Discriminator* discriminator() { return disc_.get(); }
  Adam& generator_optimizer() { return *opt_g_; }
  Adam* discriminator_optimizer() { return opt_d_.get(); }
  int stage() const { return stage_; }
  long stage_step() const { return stage_step_; }
  std::vector<size_t> next_batch() { return schedule_.next(); }

 private:
  void ensure_finite(const LossReport& r) const;

  TrainConfig cfg_;
  std::vector<Utterance> corpus_;
  std::unique_ptr<Generator> gen_;
  std::unique_ptr<Discriminator> disc_;
  std::unique_ptr<Adam> opt_g_;
  std::unique_ptr<Adam> opt_d_;
  BatchSchedule schedule_;
  Rng dropout_rng_;
  Rng crop_rng_;
  int stage_ = 1;
  long stage_step_ = 0;
  uint64_t global_step_ = 0;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<LossReport> history;
};

// Writes cfg.log_path / cfg.ckpt_dir outputs when those are set.
TrainResult train_stage1(const DatasetManifest& manifest, const TrainConfig& cfg);
TrainResult train_stage2(const Checkpoint& ckpt, const DatasetManifest& manifest,
                         const TrainConfig& cfg);

}  // namespace advtts
