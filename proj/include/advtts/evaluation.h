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

// Objective metrics (mel cepstral distortion, F0 RMSE), mel images, and
// teacher-forced corpus evaluation.

#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "advtts/dataio.h"
#include "advtts/trainer.h"

namespace advtts {

inline constexpr int kMcdCoefficients = 13;

// Orthonormal DCT-II of each log-mel row; coefficients 1..n_coeffs.
// MCD = mean over frames of (10 / ln 10) * sqrt(2 * sum_d (c_d - c'_d)^2).
double mcd(const MelSpectrogram& ref, const MelSpectrogram& hyp,
           int n_coeffs = kMcdCoefficients);

// Orthonormal DCT-II matrix (n x n); row k is basis k.
Eigen::MatrixXd dct2_matrix(int n);

struct F0Rmse {
  double rmse = 0.0;
  long frames = 0;       // co-voiced frames compared
  bool no_overlap = false;
};
// RMSE over frames voiced (> 0) in both contours.
F0Rmse f0_rmse(std::span<const double> ref, std::span<const double> hyp);

// Binary PGM (P5), width = frames, height = bins, highest bin on the top row,
// min-max normalized; a constant mel renders as uniform 128.
void render_mel(const MelSpectrogram& mel, const std::filesystem::path& path);
// Pixel rows (top to bottom) exactly as render_mel would write them.
std::vector<uint8_t> mel_to_pixels(const MelSpectrogram& mel);

struct UtteranceScore {
  std::string id;
  double mcd_db = 0.0;
  double f0_rmse_hz = 0.0;
  long mel_frames = 0;
  long f0_frames = 0;
  bool f0_no_overlap = false;
};

struct EvalReport {
  std::vector<UtteranceScore> utterances;
  double mean_mcd_db = 0.0;
  double mean_f0_rmse_hz = 0.0;
  long total_mel_frames = 0;
  long total_f0_frames = 0;

  std::string to_json() const;
};

// Frames with decoded pitch below this are treated as unvoiced.
inline constexpr double kVoicedFloorHz = 60.0;

// Teacher-forced synthesis of every manifest entry and comparison with its
// targets.
EvalReport evaluate(const Generator& gen, const DatasetManifest& manifest);
EvalReport evaluate(const Checkpoint& ckpt, const DatasetManifest& manifest);
// Builds a report from precomputed per-utterance scores.
EvalReport aggregate(std::vector<UtteranceScore> scores);

}  // namespace advtts
