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

#include "advtts/generator.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace advtts {
namespace {

double f32(double v) { return static_cast<double>(static_cast<float>(v)); }

void mean_std(std::span<const double> v, double& mean, double& std_dev) {
  double s = 0.0;
  for (double x : v) s += x;
  mean = v.empty() ? 0.0 : s / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  std_dev = v.empty() ? 1.0 : std::sqrt(ss / static_cast<double>(v.size()));
  if (!(std_dev > 1e-8)) std_dev = 1.0;
}

}  // namespace

void GeneratorConfig::validate() const {
  if (vocab_size <= 0 || n_speakers <= 0) {
    throw std::invalid_argument("GeneratorConfig: vocab_size and n_speakers must be positive");
  }
  if (hidden_dim <= 0 || n_heads <= 0 || hidden_dim % n_heads != 0) {
    throw std::invalid_argument("GeneratorConfig: hidden_dim must be divisible by n_heads");
  }
  if (reduction_factor < 1) {
    throw std::invalid_argument("GeneratorConfig: reduction_factor must be >= 1");
  }
  if (speaker_dim <= 0 || speaker_dim > hidden_dim) {
    throw std::invalid_argument("GeneratorConfig: need 0 < speaker_dim <= hidden_dim");
  }
  if (n_blocks_enc < 1 || n_blocks_dec < 1 || conv_kernel < 1 ||
      conv_filter_dim < 1 || mel_bins < 1 || variance_bins < 1 ||
      max_frames < 1 || variance.filter < 1 || variance.kernel < 1 ||
      variance.dropout < 0.0 || variance.dropout >= 1.0) {
    throw std::invalid_argument("GeneratorConfig: invalid layer sizes");
  }
}

GeneratorConfig GeneratorConfig::tiny(int n_speakers) {
  GeneratorConfig c;
  c.vocab_size = 8;
  c.hidden_dim = 32;
  c.n_blocks_enc = 2;
  c.n_blocks_dec = 2;
  c.n_heads = 2;
  c.conv_filter_dim = 48;
  c.n_speakers = n_speakers;
  c.speaker_dim = 16;
  c.variance.filter = 32;
  c.variance_bins = 16;
  return c;
}

VarianceStats VarianceStats::from_corpus(std::span<const Utterance> corpus) {
  std::vector<double> pitch, energy;
  for (const auto& u : corpus) {
    pitch.insert(pitch.end(), u.pitch.begin(), u.pitch.end());
    energy.insert(energy.end(), u.energy.begin(), u.energy.end());
  }
  VarianceStats s;
  mean_std(pitch, s.pitch_mean, s.pitch_std);
  mean_std(energy, s.energy_mean, s.energy_std);
  s.pitch_mean = f32(s.pitch_mean);
  s.pitch_std = f32(s.pitch_std);
  s.energy_mean = f32(s.energy_mean);
  s.energy_std = f32(s.energy_std);
  if (!pitch.empty()) {
    const auto [lo, hi] = std::minmax_element(pitch.begin(), pitch.end());
    s.pitch_min = f32(s.normalize_pitch(*lo));
    s.pitch_max = f32(s.normalize_pitch(*hi));
  }
  if (!energy.empty()) {
    const auto [lo, hi] = std::minmax_element(energy.begin(), energy.end());
    s.energy_min = f32(s.normalize_energy(*lo));
    s.energy_max = f32(s.normalize_energy(*hi));
  }
  return s;
}

FftBlock::FftBlock(int hidden, int heads, int filter, int kernel, Rng& rng)
    : heads_(heads),
      query_(hidden, hidden, rng),
      key_(hidden, hidden, rng),
      value_(hidden, hidden, rng),
      out_(hidden, hidden, rng),
      norm1_(hidden),
      conv1_(hidden, filter, kernel, 1, rng),
      conv2_(filter, hidden, kernel, 1, rng),
      norm2_(hidden) {}

ad::Var FftBlock::forward(const ad::Var& x) const {
  const Eigen::Index hidden = x.cols();
  const Eigen::Index head_dim = hidden / heads_;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  const ad::Var q = query_(x), k = key_(x), v = value_(x);
  std::vector<ad::Var> heads;
  heads.reserve(heads_);
  for (int h = 0; h < heads_; ++h) {
    const Eigen::Index off = h * head_dim;
    const ad::Var scores = ad::scale(
        ad::matmul_nt(ad::slice_cols(q, off, head_dim),
                      ad::slice_cols(k, off, head_dim)),
        scale);
    heads.push_back(
        ad::matmul(ad::softmax_rows(scores), ad::slice_cols(v, off, head_dim)));
  }
  const ad::Var attn = out_(ad::concat_cols(heads));
  const ad::Var y = norm1_(ad::add(x, attn));
  const ad::Var ff = conv2_(ad::relu(conv1_(y)));
  return norm2_(ad::add(y, ff));
}

void FftBlock::collect(const std::string& prefix, nn::ParamList& out) const {
  query_.collect(prefix + ".attn.query", out);
  key_.collect(prefix + ".attn.key", out);
  value_.collect(prefix + ".attn.value", out);
  out_.collect(prefix + ".attn.out", out);
  norm1_.collect(prefix + ".norm1", out);
  conv1_.collect(prefix + ".conv1", out);
  conv2_.collect(prefix + ".conv2", out);
  norm2_.collect(prefix + ".norm2", out);
}

VariancePredictor::VariancePredictor(int hidden,
                                     const VariancePredictorConfig& cfg,
                                     Rng& rng)
    : dropout_(cfg.dropout),
      conv1_(hidden, cfg.filter, cfg.kernel, 1, rng),
      norm1_(cfg.filter),
      conv2_(cfg.filter, cfg.filter, cfg.kernel, 1, rng),
      norm2_(cfg.filter),
      proj_(cfg.filter, 1, rng) {}

ad::Var VariancePredictor::forward(const ad::Var& x, Rng* dropout_rng) const {
  ad::Var h = nn::dropout(norm1_(ad::relu(conv1_(x))), dropout_, dropout_rng);
  h = nn::dropout(norm2_(ad::relu(conv2_(h))), dropout_, dropout_rng);
  return proj_(h);
}

void VariancePredictor::collect(const std::string& prefix,
                                nn::ParamList& out) const {
  conv1_.collect(prefix + ".conv1", out);
  norm1_.collect(prefix + ".norm1", out);
  conv2_.collect(prefix + ".conv2", out);
  norm2_.collect(prefix + ".norm2", out);
  proj_.collect(prefix + ".proj", out);
}

ad::Var length_regulate(const ad::Var& hidden, std::span<const int> durations) {
  if (static_cast<Eigen::Index>(durations.size()) != hidden.rows()) {
    throw std::invalid_argument("length_regulate: durations/hidden length mismatch");
  }
  std::vector<int> index;
  for (size_t i = 0; i < durations.size(); ++i) {
    if (durations[i] < 0) {
      throw std::invalid_argument("length_regulate: negative duration");
    }
    index.insert(index.end(), durations[i], static_cast<int>(i));
  }
  if (index.empty()) throw std::invalid_argument("length_regulate: empty expansion");
  return ad::gather_rows(hidden, index);
}

Generator::Generator(const GeneratorConfig& cfg, const VarianceStats& stats,
                     uint64_t seed)
    : cfg_(cfg), stats_(stats) {
  cfg_.validate();
  Rng rng(seed);
  const int h = cfg_.hidden_dim;
  phoneme_table_ = ad::parameter(nn::uniform_init(cfg_.vocab_size, h, 0.5, rng));
  speaker_table_ =
      ad::parameter(nn::uniform_init(cfg_.n_speakers, cfg_.speaker_dim, 0.5, rng));
  speaker_proj_ = nn::Linear(cfg_.speaker_dim, h, rng);
  for (int i = 0; i < cfg_.n_blocks_enc; ++i) {
    encoder_.emplace_back(h, cfg_.n_heads, cfg_.conv_filter_dim,
                          cfg_.conv_kernel, rng);
  }
  duration_predictor_ = VariancePredictor(h, cfg_.variance, rng);
  pitch_predictor_ = VariancePredictor(h, cfg_.variance, rng);
  energy_predictor_ = VariancePredictor(h, cfg_.variance, rng);
  pitch_table_ = ad::parameter(nn::uniform_init(cfg_.variance_bins, h, 0.1, rng));
  energy_table_ = ad::parameter(nn::uniform_init(cfg_.variance_bins, h, 0.1, rng));
  decoder_in_ = nn::Linear(cfg_.reduction_factor * h, h, rng);
  for (int i = 0; i < cfg_.n_blocks_dec; ++i) {
    decoder_.emplace_back(h, cfg_.n_heads, cfg_.conv_filter_dim,
                          cfg_.conv_kernel, rng);
  }
  mel_out_ = nn::Linear(h, cfg_.reduction_factor * cfg_.mel_bins, rng);
}

void Generator::check_ids(std::span<const int> phonemes, int speaker) const {
  if (phonemes.empty()) throw std::invalid_argument("empty phoneme sequence");
  for (int p : phonemes) {
    if (p < 0 || p >= cfg_.vocab_size) {
      throw std::out_of_range("phoneme id " + std::to_string(p) +
                              " out of range [0, " +
                              std::to_string(cfg_.vocab_size) + ")");
    }
  }
  if (speaker < 0 || speaker >= cfg_.n_speakers) {
    throw std::out_of_range("speaker id " + std::to_string(speaker) +
                            " out of range [0, " +
                            std::to_string(cfg_.n_speakers) + ")");
  }
}

ad::Var Generator::speaker_embedding(int speaker) const {
  const int idx[1] = {speaker};
  return ad::gather_rows(speaker_table_, idx);
}

ad::Var Generator::encode(std::span<const int> phonemes, int speaker) const {
  check_ids(phonemes, speaker);
  const auto n = static_cast<Eigen::Index>(phonemes.size());
  ad::Var x = ad::add(ad::gather_rows(phoneme_table_, phonemes),
                      ad::constant(nn::sinusoid_positions(n, cfg_.hidden_dim)));
  for (const auto& block : encoder_) x = block.forward(x);
  const ad::Var spk = speaker_proj_(speaker_embedding(speaker));
  return ad::add(x, ad::broadcast_rows(spk, n));
}

VariancePrediction Generator::predict_variances(const ad::Var& hidden,
                                                const ad::Var& expanded,
                                                Rng* dropout_rng) const {
  return {duration_predictor_.forward(hidden, dropout_rng),
          pitch_predictor_.forward(expanded, dropout_rng),
          energy_predictor_.forward(expanded, dropout_rng)};
}

int Generator::quantize(double value, double lo, double hi) const {
  if (!(hi > lo)) return 0;
  const double pos = (value - lo) / (hi - lo) * cfg_.variance_bins;
  if (!std::isfinite(pos)) return pos > 0 ? cfg_.variance_bins - 1 : 0;
  return std::clamp(static_cast<int>(std::floor(pos)), 0,
                    cfg_.variance_bins - 1);
}

ad::Var Generator::add_variance_embeddings(
    const ad::Var& expanded, std::span<const double> pitch,
    std::span<const double> energy) const {
  std::vector<int> pitch_bins(pitch.size()), energy_bins(energy.size());
  for (size_t t = 0; t < pitch.size(); ++t) {
    pitch_bins[t] = quantize(pitch[t], stats_.pitch_min, stats_.pitch_max);
  }
  for (size_t t = 0; t < energy.size(); ++t) {
    energy_bins[t] = quantize(energy[t], stats_.energy_min, stats_.energy_max);
  }
  return ad::add(ad::add(expanded, ad::gather_rows(pitch_table_, pitch_bins)),
                 ad::gather_rows(energy_table_, energy_bins));
}

int Generator::decoder_length(int frames) const {
  return (frames + cfg_.reduction_factor - 1) / cfg_.reduction_factor;
}

ad::Var Generator::decode(const ad::Var& frame_stream) const {
  const int frames = static_cast<int>(frame_stream.rows());
  const int r = cfg_.reduction_factor;
  const int positions = decoder_length(frames);
  const int h = cfg_.hidden_dim;
  ad::Var x = ad::window_rows(frame_stream, 0, static_cast<Eigen::Index>(positions) * r);
  x = decoder_in_(ad::reshape(x, positions, static_cast<Eigen::Index>(r) * h));
  x = ad::add(x, ad::constant(nn::sinusoid_positions(positions, h)));
  for (const auto& block : decoder_) x = block.forward(x);
  ad::Var mel = ad::reshape(mel_out_(x), static_cast<Eigen::Index>(positions) * r,
                            cfg_.mel_bins);
  return ad::window_rows(mel, 0, frames);
}

ReconTargets Generator::targets(const Utterance& utt) const {
  ReconTargets t;
  t.mel = utt.mel.data.cast<double>();
  const auto n_ph = static_cast<Eigen::Index>(utt.durations.size());
  t.log_dur.resize(n_ph, 1);
  for (Eigen::Index i = 0; i < n_ph; ++i) {
    t.log_dur(i, 0) = std::log(static_cast<double>(utt.durations[i]) + 1.0);
  }
  const Eigen::Index frames = utt.mel.n_frames();
  t.pitch.resize(frames, 1);
  t.energy.resize(frames, 1);
  for (Eigen::Index i = 0; i < frames; ++i) {
    t.pitch(i, 0) = stats_.normalize_pitch(utt.pitch[i]);
    t.energy(i, 0) = stats_.normalize_energy(utt.energy[i]);
  }
  return t;
}

GeneratorOutput Generator::forward_train(const Utterance& utt,
                                         Rng* dropout_rng) const {
  if (utt.mel.n_frames() > cfg_.max_frames) {
    throw std::invalid_argument(utt.id + ": utterance longer than max_frames");
  }
  const ad::Var hidden = encode(utt.phonemes, utt.speaker);
  const ad::Var expanded = length_regulate(hidden, utt.durations);
  if (expanded.rows() != utt.mel.n_frames()) {
    throw std::invalid_argument(utt.id + ": durations do not sum to mel frames");
  }
  VariancePrediction var = predict_variances(hidden, expanded, dropout_rng);
  const ReconTargets tgt = targets(utt);
  const std::span<const double> pitch(tgt.pitch.data(), tgt.pitch.size());
  const std::span<const double> energy(tgt.energy.data(), tgt.energy.size());
  const ad::Var stream = add_variance_embeddings(expanded, pitch, energy);
  return {decode(stream), var.log_dur, var.pitch, var.energy};
}

std::vector<int> Generator::predict_durations(std::span<const int> phonemes,
                                              int speaker) const {
  const ad::Var hidden = encode(phonemes, speaker);
  const ad::Var log_dur = duration_predictor_.forward(hidden, nullptr);
  std::vector<int> durations(phonemes.size());
  for (size_t i = 0; i < durations.size(); ++i) {
    const double d = std::exp(log_dur.value()(static_cast<Eigen::Index>(i), 0)) - 1.0;
    durations[i] = std::max(1, static_cast<int>(std::lround(std::min(d, 1e6))));
  }
  return durations;
}

MelSpectrogram Generator::forward_infer(std::span<const int> phonemes,
                                        int speaker) const {
  const ad::Var hidden = encode(phonemes, speaker);
  const std::vector<int> durations = predict_durations(phonemes, speaker);
  long total = 0;
  for (int d : durations) total += d;
  if (total > cfg_.max_frames) {
    throw std::invalid_argument("forward_infer: predicted length exceeds max_frames");
  }
  const ad::Var expanded = length_regulate(hidden, durations);
  const VariancePrediction var = predict_variances(hidden, expanded, nullptr);
  const std::span<const double> pitch(var.pitch.value().data(),
                                      var.pitch.value().size());
  const std::span<const double> energy(var.energy.value().data(),
                                       var.energy.value().size());
  return to_mel(decode(add_variance_embeddings(expanded, pitch, energy)).value());
}

nn::ParamList Generator::parameters() const {
  nn::ParamList out;
  out.push_back({"gen.phoneme_table", phoneme_table_});
  out.push_back({"gen.speaker_table", speaker_table_});
  speaker_proj_.collect("gen.speaker_proj", out);
  for (size_t i = 0; i < encoder_.size(); ++i) {
    encoder_[i].collect("gen.encoder." + std::to_string(i), out);
  }
  duration_predictor_.collect("gen.duration", out);
  pitch_predictor_.collect("gen.pitch", out);
  energy_predictor_.collect("gen.energy", out);
  out.push_back({"gen.pitch_table", pitch_table_});
  out.push_back({"gen.energy_table", energy_table_});
  decoder_in_.collect("gen.decoder.in", out);
  for (size_t i = 0; i < decoder_.size(); ++i) {
    decoder_[i].collect("gen.decoder." + std::to_string(i), out);
  }
  mel_out_.collect("gen.mel_out", out);
  return out;
}

MelSpectrogram to_mel(const ad::Matrix& m) {
  MelSpectrogram mel;
  mel.data = m.cast<float>();
  return mel;
}

}  // namespace advtts
