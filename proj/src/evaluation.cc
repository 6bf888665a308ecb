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

#include "advtts/evaluation.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include "advtts/errors.h"
#include "json.hpp"

namespace advtts {
namespace {

// Neumaier compensated sum, independent of accumulation order to rounding.
double compensated_sum(const std::vector<double>& v) {
  double sum = 0.0, c = 0.0;
  for (double x : v) {
    const double t = sum + x;
    c += std::abs(sum) >= std::abs(x) ? (sum - t) + x : (x - t) + sum;
    sum = t;
  }
  return sum + c;
}

}  // namespace

Eigen::MatrixXd dct2_matrix(int n) {
  Eigen::MatrixXd d(n, n);
  for (int k = 0; k < n; ++k) {
    const double scale = k == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
    for (int i = 0; i < n; ++i) {
      d(k, i) = scale * std::cos(std::numbers::pi * k * (2 * i + 1) / (2.0 * n));
    }
  }
  return d;
}

double mcd(const MelSpectrogram& ref, const MelSpectrogram& hyp, int n_coeffs) {
  if (ref.n_frames() != hyp.n_frames() || ref.n_bins() != hyp.n_bins()) {
    throw std::invalid_argument("mcd: frame-count mismatch");
  }
  if (ref.n_frames() == 0) throw std::invalid_argument("mcd: empty input");
  if (n_coeffs < 1 || n_coeffs >= ref.n_bins()) {
    throw std::invalid_argument("mcd: n_coeffs must be in [1, bins)");
  }
  const Eigen::MatrixXd basis = dct2_matrix(ref.n_bins()).middleRows(1, n_coeffs);
  const Eigen::MatrixXd diff =
      (ref.data.cast<double>() - hyp.data.cast<double>()).transpose();
  const Eigen::MatrixXd cep = basis * diff;  // n_coeffs x frames
  const double k = 10.0 / std::log(10.0);
  std::vector<double> per_frame(ref.n_frames());
  for (int t = 0; t < ref.n_frames(); ++t) {
    per_frame[t] = k * std::sqrt(2.0 * cep.col(t).squaredNorm());
  }
  return compensated_sum(per_frame) / ref.n_frames();
}

F0Rmse f0_rmse(std::span<const double> ref, std::span<const double> hyp) {
  if (ref.size() != hyp.size()) throw std::invalid_argument("f0_rmse: length mismatch");
  std::vector<double> sq;
  for (size_t i = 0; i < ref.size(); ++i) {
    if (ref[i] > 0.0 && hyp[i] > 0.0) sq.push_back((ref[i] - hyp[i]) * (ref[i] - hyp[i]));
  }
  F0Rmse r;
  r.frames = static_cast<long>(sq.size());
  if (sq.empty()) {
    r.no_overlap = true;
    return r;
  }
  r.rmse = std::sqrt(compensated_sum(sq) / static_cast<double>(sq.size()));
  return r;
}

std::vector<uint8_t> mel_to_pixels(const MelSpectrogram& mel) {
  const int w = mel.n_frames(), h = mel.n_bins();
  std::vector<uint8_t> px(static_cast<size_t>(w) * h);
  const float lo = mel.data.minCoeff(), hi = mel.data.maxCoeff();
  for (int row = 0; row < h; ++row) {
    const int bin = h - 1 - row;
    for (int t = 0; t < w; ++t) {
      uint8_t v = 128;
      if (hi > lo) {
        const double norm = (static_cast<double>(mel.data(t, bin)) - lo) / (hi - lo);
        v = static_cast<uint8_t>(std::lround(255.0 * norm));
      }
      px[static_cast<size_t>(row) * w + t] = v;
    }
  }
  return px;
}

void render_mel(const MelSpectrogram& mel, const std::filesystem::path& path) {
  if (mel.n_frames() == 0 || mel.n_bins() == 0) {
    throw std::invalid_argument("render_mel: empty mel");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << "P5\n" << mel.n_frames() << ' ' << mel.n_bins() << "\n255\n";
  const auto px = mel_to_pixels(mel);
  out.write(reinterpret_cast<const char*>(px.data()),
            static_cast<std::streamsize>(px.size()));
  if (!out) throw DataError("write failed: " + path.string());
}

EvalReport aggregate(std::vector<UtteranceScore> scores) {
  EvalReport r;
  std::vector<double> mcds, f0s;
  for (const auto& s : scores) {
    mcds.push_back(s.mcd_db);
    f0s.push_back(s.f0_rmse_hz);
    r.total_mel_frames += s.mel_frames;
    r.total_f0_frames += s.f0_frames;
  }
  if (!scores.empty()) {
    r.mean_mcd_db = compensated_sum(mcds) / static_cast<double>(scores.size());
    r.mean_f0_rmse_hz = compensated_sum(f0s) / static_cast<double>(scores.size());
  }
  r.utterances = std::move(scores);
  return r;
}

EvalReport evaluate(const Generator& gen, const DatasetManifest& manifest) {
  std::vector<UtteranceScore> scores;
  for (const auto& entry : manifest.entries) {
    const Utterance utt = load_utterance(manifest, entry);
    const GeneratorOutput out = gen.forward_train(utt, nullptr);
    UtteranceScore s;
    s.id = utt.id;
    s.mel_frames = utt.mel.n_frames();
    s.mcd_db = mcd(utt.mel, to_mel(out.mel.value()));
    std::vector<double> ref(utt.pitch.begin(), utt.pitch.end());
    std::vector<double> hyp(ref.size());
    for (size_t t = 0; t < hyp.size(); ++t) {
      const double hz = gen.stats().denormalize_pitch(
          out.pitch.value()(static_cast<Eigen::Index>(t), 0));
      hyp[t] = hz >= kVoicedFloorHz ? hz : 0.0;
    }
    const F0Rmse f = f0_rmse(ref, hyp);
    s.f0_rmse_hz = f.rmse;
    s.f0_frames = f.frames;
    s.f0_no_overlap = f.no_overlap;
    scores.push_back(std::move(s));
  }
  return aggregate(std::move(scores));
}

EvalReport evaluate(const Checkpoint& ckpt, const DatasetManifest& manifest) {
  return evaluate(*restore_generator(ckpt), manifest);
}

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["mean_mcd_db"] = mean_mcd_db;
  j["mean_f0_rmse_hz"] = mean_f0_rmse_hz;
  j["total_mel_frames"] = total_mel_frames;
  j["total_f0_frames"] = total_f0_frames;
  j["utterances"] = nlohmann::json::array();
  for (const auto& u : utterances) {
    j["utterances"].push_back({{"id", u.id},
                               {"mcd_db", u.mcd_db},
                               {"f0_rmse_hz", u.f0_rmse_hz},
                               {"mel_frames", u.mel_frames},
                               {"f0_frames", u.f0_frames},
                               {"f0_no_overlap", u.f0_no_overlap}});
  }
  return j.dump(2);
}

}  // namespace advtts
