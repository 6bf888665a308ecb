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

// Non-autoregressive multi-speaker acoustic model: phoneme encoder, speaker
// embedding added after the encoder, duration/pitch/energy predictors, length
// regulator, and a decoder that runs at 1/r of the frame rate.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "advtts/autodiff.h"
#include "advtts/dataio.h"
#include "advtts/nn.h"
#include "advtts/rng.h"

namespace advtts {

struct VariancePredictorConfig {
  int kernel = 3;
  int filter = 128;
  double dropout = 0.1;
};

struct GeneratorConfig {
  int vocab_size = kSyntheticVocab;
  int hidden_dim = 128;
  int n_blocks_enc = 2;
  int n_blocks_dec = 2;
  int n_heads = 2;
  int conv_kernel = 3;
  int conv_filter_dim = 256;
  int n_speakers = 1;
  int speaker_dim = 64;
  int reduction_factor = 2;
  int max_frames = 4096;
  int mel_bins = 80;
  int variance_bins = 256;
  VariancePredictorConfig variance;

  void validate() const;
  // Small configuration used for finite-difference checks.
  static GeneratorConfig tiny(int n_speakers);
};

// Affine normalization of pitch/energy targets and the quantization range of
// the add-back embeddings (in normalized units).
struct VarianceStats {
  double pitch_mean = 0.0, pitch_std = 1.0;
  double energy_mean = 0.0, energy_std = 1.0;
  double pitch_min = -3.0, pitch_max = 3.0;
  double energy_min = -3.0, energy_max = 3.0;

  static VarianceStats from_corpus(std::span<const Utterance> corpus);
  double normalize_pitch(double hz) const { return (hz - pitch_mean) / pitch_std; }
  double denormalize_pitch(double v) const { return v * pitch_std + pitch_mean; }
  double normalize_energy(double e) const {
    return (e - energy_mean) / energy_std;
  }
};

// Teacher-forced regression targets in model units.
struct ReconTargets {
  ad::Matrix mel;      // T x mel_bins
  ad::Matrix log_dur;  // N x 1, log(d + 1)
  ad::Matrix pitch;    // T x 1, normalized
  ad::Matrix energy;   // T x 1, normalized
};

struct GeneratorOutput {
  ad::Var mel;      // T x mel_bins
  ad::Var log_dur;  // N x 1
  ad::Var pitch;    // T x 1
  ad::Var energy;   // T x 1
};

struct VariancePrediction {
  ad::Var log_dur;
  ad::Var pitch;
  ad::Var energy;
};

// Self-attention and a two-layer convolution, each wrapped in residual +
// post layer norm.
class FftBlock {
 public:
  FftBlock(int hidden, int heads, int filter, int kernel, Rng& rng);
  ad::Var forward(const ad::Var& x) const;
  void collect(const std::string& prefix, nn::ParamList& out) const;

 private:
  int heads_;
  nn::Linear query_, key_, value_, out_;
  nn::LayerNorm norm1_;
  nn::Conv1d conv1_, conv2_;
  nn::LayerNorm norm2_;
};

class VariancePredictor {
 public:
  VariancePredictor() = default;
  VariancePredictor(int hidden, const VariancePredictorConfig& cfg, Rng& rng);
  // T x hidden -> T x 1
  ad::Var forward(const ad::Var& x, Rng* dropout_rng) const;
  void collect(const std::string& prefix, nn::ParamList& out) const;
  nn::Linear& projection() { return proj_; }

 private:
  double dropout_ = 0.0;
  nn::Conv1d conv1_;
  nn::LayerNorm norm1_;
  nn::Conv1d conv2_;
  nn::LayerNorm norm2_;
  nn::Linear proj_;
};

// Repeats hidden.row(i) durations[i] times, in order.
ad::Var length_regulate(const ad::Var& hidden, std::span<const int> durations);

class Generator {
 public:
  Generator(const GeneratorConfig& cfg, const VarianceStats& stats,
            uint64_t seed);

  const GeneratorConfig& config() const { return cfg_; }
  const VarianceStats& stats() const { return stats_; }

  // Encoder stack over embedded phonemes, then the projected speaker
  // embedding added at every position.
  ad::Var encode(std::span<const int> phonemes, int speaker) const;
  // 1 x speaker_dim row of the lookup table.
  ad::Var speaker_embedding(int speaker) const;
  VariancePrediction predict_variances(const ad::Var& hidden,
                                       const ad::Var& expanded,
                                       Rng* dropout_rng) const;
  // Adds the quantized pitch/energy embeddings (normalized units) to the
  // frame-rate stream.
  ad::Var add_variance_embeddings(const ad::Var& expanded,
                                  std::span<const double> pitch,
                                  std::span<const double> energy) const;
  ad::Var decode(const ad::Var& frame_stream) const;
  // Number of decoder positions for `frames` mel frames.
  int decoder_length(int frames) const;

  GeneratorOutput forward_train(const Utterance& utt,
                                Rng* dropout_rng = nullptr) const;
  ReconTargets targets(const Utterance& utt) const;

  // Free-running synthesis with predicted durations and variances.
  std::vector<int> predict_durations(std::span<const int> phonemes,
                                     int speaker) const;
  MelSpectrogram forward_infer(std::span<const int> phonemes,
                               int speaker) const;

  int quantize(double value, double lo, double hi) const;

  // Named learnable tensors, including the speaker table.
  nn::ParamList parameters() const;
  VariancePredictor& duration_predictor() { return duration_predictor_; }

 private:
  void check_ids(std::span<const int> phonemes, int speaker) const;

  GeneratorConfig cfg_;
  VarianceStats stats_;
  ad::Var phoneme_table_;
  ad::Var speaker_table_;
  nn::Linear speaker_proj_;
  std::vector<FftBlock> encoder_;
  VariancePredictor duration_predictor_;
  VariancePredictor pitch_predictor_;
  VariancePredictor energy_predictor_;
  ad::Var pitch_table_;
  ad::Var energy_table_;
  nn::Linear decoder_in_;
  std::vector<FftBlock> decoder_;
  nn::Linear mel_out_;
};

MelSpectrogram to_mel(const ad::Matrix& m);

}  // namespace advtts
