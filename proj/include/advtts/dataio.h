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

// Feature extraction, the synthetic oracle corpus, and on-disk formats.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace advtts {

struct StftConfig {
  int sample_rate = 22050;
  int frame_length = 1024;
  int hop_length = 256;
  int mel_bins = 80;
  double fmin = 0.0;
  double fmax = 8000.0;
  double log_floor = 1e-5;

  // Throws std::invalid_argument when an invariant is broken.
  void validate() const;
};

using FloatMatrix =
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Frames x mel bins of natural-log mel magnitudes. Stored in single precision
// to match the on-disk format.
struct MelSpectrogram {
  FloatMatrix data;

  int n_frames() const { return static_cast<int>(data.rows()); }
  int n_bins() const { return static_cast<int>(data.cols()); }
};

struct Utterance {
  std::string id;
  std::vector<int> phonemes;
  int speaker = 0;
  MelSpectrogram mel;
  std::vector<int> durations;  // frames per phoneme
  std::vector<float> pitch;    // Hz per frame, 0 = unvoiced
  std::vector<float> energy;   // per frame

  // Throws DataError if durations/contours disagree with the mel length.
  void validate() const;
};

struct ManifestEntry {
  std::string id;
  int speaker = 0;
  std::vector<int> phonemes;
  std::string mel;
  std::string dur;
  std::string f0;
  std::string energy;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::map<std::string, int> speaker_map;
  // Directory that relative feature paths resolve against.
  std::filesystem::path root;

  int n_speakers() const { return static_cast<int>(speaker_map.size()); }
  // Largest phoneme id + 1 over all entries.
  int vocab_size() const;
};

// Log-mel analysis: periodic Hann window, reflective center padding,
// magnitude spectrum, HTK-scale area-normalized triangular filters.
MelSpectrogram compute_mel(std::span<const double> waveform,
                           const StftConfig& cfg);

// Frame-wise normalized autocorrelation pitch tracker on the same frame grid
// as compute_mel. Unvoiced frames are 0.
std::vector<double> estimate_f0(std::span<const double> waveform,
                                const StftConfig& cfg, double f_lo = 60.0,
                                double f_hi = 600.0);

// L2 norm of each linear-mel frame.
std::vector<double> compute_energy(const MelSpectrogram& mel);

inline constexpr int kSyntheticVocab = 32;

// Writes manifest.jsonl, speakers.json, and mel/, dur/, f0/, energy/ feature
// files under `out_dir`. Output is a pure function of the arguments.
DatasetManifest generate_synthetic_corpus(uint64_t seed, int n_speakers,
                                          int n_utts, const StftConfig& cfg,
                                          const std::filesystem::path& out_dir);

// Builds one synthetic utterance waveform plus its oracle targets; exposed for
// tests. `wave` receives the samples.
Utterance synthesize_utterance(uint64_t seed, int index, int n_speakers,
                               const StftConfig& cfg, std::vector<double>* wave);

// "GSF1" tensor files: magic, u32 rank, u32 dims, row-major f32 payload, all
// little-endian.
struct TensorFile {
  std::vector<uint32_t> dims;
  std::vector<float> data;
};
void write_tensor_file(const std::filesystem::path& path,
                       std::span<const uint32_t> dims,
                       std::span<const float> data);
TensorFile read_tensor_file(const std::filesystem::path& path);

void write_mel(const std::filesystem::path& path, const MelSpectrogram& mel);
MelSpectrogram read_mel(const std::filesystem::path& path);
void write_contour(const std::filesystem::path& path,
                   std::span<const float> values);
std::vector<float> read_contour(const std::filesystem::path& path);

void write_manifest(const std::filesystem::path& dir,
                    const DatasetManifest& manifest);
// Reads manifest.jsonl (and speakers.json if present) from a manifest path or
// its directory.
DatasetManifest read_manifest(const std::filesystem::path& path);
Utterance load_utterance(const DatasetManifest& manifest,
                         const ManifestEntry& entry);
std::vector<Utterance> load_all(const DatasetManifest& manifest);

}  // namespace advtts
