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

#include "advtts/dataio.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <mutex>
#include <numbers>
#include <set>
#include <sstream>
#include <stdexcept>

#include <fftw3.h>

#include "advtts/errors.h"
#include "advtts/rng.h"
#include "json.hpp"

namespace advtts {
namespace {

using json = nlohmann::json;
constexpr double kPi = std::numbers::pi;

// FFTW planning is not thread-safe; execution on distinct plans is.
std::mutex& fftw_plan_mutex() {
  static std::mutex m;
  return m;
}

class RealFft {
 public:
  explicit RealFft(int n) : n_(n) {
    std::lock_guard<std::mutex> lock(fftw_plan_mutex());
    in_ = fftw_alloc_real(n);
    out_ = fftw_alloc_complex(n / 2 + 1);
    plan_ = fftw_plan_dft_r2c_1d(n, in_, out_, FFTW_ESTIMATE);
  }
  ~RealFft() {
    std::lock_guard<std::mutex> lock(fftw_plan_mutex());
    fftw_destroy_plan(plan_);
    fftw_free(in_);
    fftw_free(out_);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  double* input() { return in_; }
  void execute() { fftw_execute(plan_); }
  double magnitude(int k) const { return std::hypot(out_[k][0], out_[k][1]); }

 private:
  int n_;
  double* in_ = nullptr;
  fftw_complex* out_ = nullptr;
  fftw_plan plan_;
};

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) {
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

// mel_bins x (frame_length/2 + 1) filter matrix.
Eigen::MatrixXd mel_filterbank(const StftConfig& cfg) {
  const int n_freq = cfg.frame_length / 2 + 1;
  const double mel_lo = hz_to_mel(cfg.fmin);
  const double mel_hi = hz_to_mel(cfg.fmax);
  std::vector<double> edges(cfg.mel_bins + 2);
  for (int i = 0; i < cfg.mel_bins + 2; ++i) {
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (cfg.mel_bins + 1));
  }
  Eigen::MatrixXd fb = Eigen::MatrixXd::Zero(cfg.mel_bins, n_freq);
  for (int m = 0; m < cfg.mel_bins; ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    const double norm = 2.0 / (hi - lo);
    for (int k = 0; k < n_freq; ++k) {
      const double f =
          static_cast<double>(k) * cfg.sample_rate / cfg.frame_length;
      const double up = (f - lo) / (mid - lo);
      const double down = (hi - f) / (hi - mid);
      fb(m, k) = std::max(0.0, std::min(up, down)) * norm;
    }
  }
  return fb;
}

// Sample at padded position `i` (center padding by frame_length/2, mirrored
// without repeating the edge sample).
double reflect_at(std::span<const double> x, long i) {
  const long n = static_cast<long>(x.size());
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
  }
  return x[static_cast<size_t>(i)];
}

int frame_count(size_t len, int hop) {
  return static_cast<int>(len / static_cast<size_t>(hop)) + 1;
}

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_f32(std::ostream& os, float f) {
  put_u32(os, std::bit_cast<uint32_t>(f));
}

std::vector<char> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return std::vector<char>(std::istreambuf_iterator<char>(in), {});
}

uint32_t get_u32(const std::vector<char>& buf, size_t& off,
                 const std::string& what) {
  if (off + 4 > buf.size()) {
    throw DataError(what + ": truncated at offset " + std::to_string(off));
  }
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<uint32_t>(static_cast<unsigned char>(buf[off + i]))
         << (8 * i);
  }
  off += 4;
  return v;
}

void ensure_parent(const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
}

}  // namespace

void StftConfig::validate() const {
  if (!(frame_length > hop_length && hop_length > 0)) {
    throw std::invalid_argument("StftConfig: need frame_length > hop_length > 0");
  }
  if (mel_bins <= 0) throw std::invalid_argument("StftConfig: mel_bins <= 0");
  if (fmax > sample_rate / 2.0 || fmin < 0.0 || fmin >= fmax) {
    throw std::invalid_argument("StftConfig: need 0 <= fmin < fmax <= sr/2");
  }
  if (!(log_floor > 0.0)) {
    throw std::invalid_argument("StftConfig: log_floor must be positive");
  }
}

void Utterance::validate() const {
  long total = 0;
  for (int d : durations) {
    if (d < 0) throw DataError(id + ": negative duration");
    total += d;
  }
  if (durations.size() != phonemes.size()) {
    throw DataError(id + ": " + std::to_string(durations.size()) +
                    " durations for " + std::to_string(phonemes.size()) +
                    " phonemes");
  }
  if (total != mel.n_frames()) {
    throw DataError(id + ": duration sum " + std::to_string(total) +
                    " != mel frames " + std::to_string(mel.n_frames()));
  }
  if (pitch.size() != static_cast<size_t>(mel.n_frames()) ||
      energy.size() != static_cast<size_t>(mel.n_frames())) {
    throw DataError(id + ": contour length does not match mel frames");
  }
  if (mel.n_frames() < 1) throw DataError(id + ": empty mel");
}

int DatasetManifest::vocab_size() const {
  int top = -1;
  for (const auto& e : entries) {
    for (int p : e.phonemes) top = std::max(top, p);
  }
  return top + 1;
}

MelSpectrogram compute_mel(std::span<const double> waveform,
                           const StftConfig& cfg) {
  cfg.validate();
  if (waveform.size() < static_cast<size_t>(cfg.frame_length)) {
    throw std::invalid_argument("compute_mel: input too short");
  }
  const int n_frames = frame_count(waveform.size(), cfg.hop_length);
  const int n_freq = cfg.frame_length / 2 + 1;
  const Eigen::MatrixXd fb = mel_filterbank(cfg);
  std::vector<double> window(cfg.frame_length);
  for (int i = 0; i < cfg.frame_length; ++i) {
    window[i] = 0.5 - 0.5 * std::cos(2.0 * kPi * i / cfg.frame_length);
  }

  RealFft fft(cfg.frame_length);
  Eigen::VectorXd mag(n_freq);
  MelSpectrogram mel;
  mel.data.resize(n_frames, cfg.mel_bins);
  const long half = cfg.frame_length / 2;
  for (int t = 0; t < n_frames; ++t) {
    const long start = static_cast<long>(t) * cfg.hop_length - half;
    double* in = fft.input();
    for (int i = 0; i < cfg.frame_length; ++i) {
      in[i] = reflect_at(waveform, start + i) * window[i];
    }
    fft.execute();
    for (int k = 0; k < n_freq; ++k) mag(k) = fft.magnitude(k);
    const Eigen::VectorXd energies = fb * mag;
    for (int m = 0; m < cfg.mel_bins; ++m) {
      mel.data(t, m) =
          static_cast<float>(std::log(std::max(energies(m), cfg.log_floor)));
    }
  }
  return mel;
}

std::vector<double> estimate_f0(std::span<const double> waveform,
                                const StftConfig& cfg, double f_lo,
                                double f_hi) {
  if (waveform.empty()) throw std::invalid_argument("estimate_f0: empty waveform");
  if (!(f_lo > 0.0 && f_lo < f_hi && f_hi <= cfg.sample_rate / 2.0)) {
    throw std::invalid_argument("estimate_f0: need 0 < f_lo < f_hi <= sr/2");
  }
  constexpr double kVoicingThreshold = 0.3;
  constexpr double kSilenceRms = 1e-4;
  // Earliest peak within this fraction of the best one wins, which suppresses
  // picking a multiple of the true period.
  constexpr double kPeakTolerance = 0.9;

  const int n_frames = frame_count(waveform.size(), cfg.hop_length);
  const int n = cfg.frame_length;
  const int lag_min = std::max(1, static_cast<int>(std::floor(cfg.sample_rate / f_hi)));
  const int lag_max =
      std::min(n - 2, static_cast<int>(std::ceil(cfg.sample_rate / f_lo)));
  std::vector<double> frame(n);
  std::vector<double> r(lag_max + 2, 0.0);
  std::vector<double> f0(n_frames, 0.0);
  const long half = n / 2;

  for (int t = 0; t < n_frames; ++t) {
    const long start = static_cast<long>(t) * cfg.hop_length - half;
    double power = 0.0;
    for (int i = 0; i < n; ++i) {
      frame[i] = reflect_at(waveform, start + i);
      power += frame[i] * frame[i];
    }
    if (std::sqrt(power / n) < kSilenceRms) continue;

    for (int lag = lag_min - 1; lag <= lag_max + 1; ++lag) {
      double xy = 0.0, xx = 0.0, yy = 0.0;
      for (int i = 0; i + lag < n; ++i) {
        xy += frame[i] * frame[i + lag];
        xx += frame[i] * frame[i];
        yy += frame[i + lag] * frame[i + lag];
      }
      r[lag] = (xx > 0.0 && yy > 0.0) ? xy / std::sqrt(xx * yy) : 0.0;
    }
    double best = -1.0;
    for (int lag = lag_min; lag <= lag_max; ++lag) {
      if (r[lag] > r[lag - 1] && r[lag] >= r[lag + 1]) best = std::max(best, r[lag]);
    }
    if (best < kVoicingThreshold) continue;
    int pick = -1;
    for (int lag = lag_min; lag <= lag_max; ++lag) {
      if (r[lag] > r[lag - 1] && r[lag] >= r[lag + 1] &&
          r[lag] >= kPeakTolerance * best) {
        pick = lag;
        break;
      }
    }
    const double a = r[pick - 1], b = r[pick], c = r[pick + 1];
    const double denom = a - 2.0 * b + c;
    double offset = denom != 0.0 ? 0.5 * (a - c) / denom : 0.0;
    offset = std::clamp(offset, -0.5, 0.5);
    const double hz = cfg.sample_rate / (pick + offset);
    f0[t] = std::clamp(hz, f_lo, f_hi);
  }
  return f0;
}

std::vector<double> compute_energy(const MelSpectrogram& mel) {
  std::vector<double> energy(mel.n_frames());
  for (int t = 0; t < mel.n_frames(); ++t) {
    double s = 0.0;
    for (int m = 0; m < mel.n_bins(); ++m) {
      const double lin = std::exp(static_cast<double>(mel.data(t, m)));
      s += lin * lin;
    }
    energy[t] = std::sqrt(s);
  }
  return energy;
}

namespace {

struct PhonemeSpec {
  bool voiced = true;
  double formants[3] = {};
  double bandwidths[3] = {};
  double gains[3] = {};
  double noise_level = 0.0;
};

struct SpeakerSpec {
  double base_f0 = 120.0;
  double formant_scale = 1.0;
  double tilt = 1.0;  // spectral decay exponent
};

// Phoneme inventory is shared by every corpus generated from `seed`.
std::vector<PhonemeSpec> phoneme_inventory(uint64_t seed) {
  Rng rng(Rng::derive(seed, 0x70686f6eULL));
  std::vector<PhonemeSpec> inv(kSyntheticVocab);
  for (int p = 0; p < kSyntheticVocab; ++p) {
    PhonemeSpec& s = inv[p];
    s.voiced = p < 24;
    s.formants[0] = rng.uniform(250.0, 900.0);
    s.formants[1] = rng.uniform(900.0, 2500.0);
    s.formants[2] = rng.uniform(2400.0, 3600.0);
    for (int i = 0; i < 3; ++i) {
      s.bandwidths[i] = rng.uniform(60.0, 200.0);
      s.gains[i] = rng.uniform(0.3, 1.0) / (i + 1);
    }
    s.noise_level = s.voiced ? 0.0 : rng.uniform(0.02, 0.08);
  }
  return inv;
}

SpeakerSpec speaker_spec(uint64_t seed, int speaker) {
  Rng rng(Rng::derive(seed, 0x73706b00ULL + static_cast<uint64_t>(speaker)));
  SpeakerSpec s;
  const bool high = speaker % 2 == 1;
  s.base_f0 = high ? rng.uniform(180.0, 240.0) : rng.uniform(95.0, 140.0);
  s.formant_scale = high ? rng.uniform(1.05, 1.18) : rng.uniform(0.88, 1.0);
  s.tilt = rng.uniform(0.6, 1.2);
  return s;
}

double envelope(const PhonemeSpec& ph, const SpeakerSpec& spk, double hz) {
  double a = 0.0;
  for (int i = 0; i < 3; ++i) {
    const double f = ph.formants[i] * spk.formant_scale;
    const double x = (hz - f) / ph.bandwidths[i];
    a += ph.gains[i] / (1.0 + x * x);
  }
  return a * std::pow(1.0 + hz / 500.0, -spk.tilt) + 0.01;
}

}  // namespace

Utterance synthesize_utterance(uint64_t seed, int index, int n_speakers,
                               const StftConfig& cfg,
                               std::vector<double>* wave_out) {
  static constexpr int kMinPhonemes = 5, kMaxPhonemes = 20;
  static constexpr int kMinDur = 2, kMaxDur = 12;
  const auto inventory = phoneme_inventory(seed);
  Rng rng(Rng::derive(seed, static_cast<uint64_t>(index) + 1));

  Utterance utt;
  char name[32];
  std::snprintf(name, sizeof(name), "utt%05d", index);
  utt.id = name;
  utt.speaker = index % n_speakers;
  const SpeakerSpec spk = speaker_spec(seed, utt.speaker);

  const int n_ph = rng.uniform_int(kMinPhonemes, kMaxPhonemes);
  int n_frames = 0;
  for (int i = 0; i < n_ph; ++i) {
    utt.phonemes.push_back(rng.uniform_int(0, kSyntheticVocab - 1));
    utt.durations.push_back(rng.uniform_int(kMinDur, kMaxDur));
    n_frames += utt.durations.back();
  }
  std::vector<int> frame_phone(n_frames);
  for (int i = 0, t = 0; i < n_ph; ++i) {
    for (int k = 0; k < utt.durations[i]; ++k) frame_phone[t++] = i;
  }

  // Slow intonation: declination plus one sinusoidal excursion.
  const double period = rng.uniform(20.0, 60.0);
  const double phase = rng.uniform(0.0, 2.0 * kPi);
  const double depth = rng.uniform(0.04, 0.12);
  std::vector<double> frame_f0(n_frames);
  for (int t = 0; t < n_frames; ++t) {
    frame_f0[t] = spk.base_f0 *
                  (1.0 + depth * std::sin(2.0 * kPi * t / period + phase)) *
                  (1.0 - 0.15 * t / std::max(1, n_frames));
  }

  const size_t n_samples = static_cast<size_t>(n_frames - 1) * cfg.hop_length;
  std::vector<double> wave(n_samples, 0.0);
  const double nyquist_cap = std::min(cfg.fmax, cfg.sample_rate / 2.0 - 100.0);
  double phi = 0.0;
  for (size_t n = 0; n < n_samples; ++n) {
    const double pos = static_cast<double>(n) / cfg.hop_length;
    const int t0 = std::min(static_cast<int>(pos), n_frames - 1);
    const int t1 = std::min(t0 + 1, n_frames - 1);
    const int t_near = std::min(static_cast<int>(std::lround(pos)), n_frames - 1);
    const PhonemeSpec& ph = inventory[utt.phonemes[frame_phone[t_near]]];
    const double frac = pos - t0;
    const double f0 = frame_f0[t0] * (1.0 - frac) + frame_f0[t1] * frac;
    phi += 2.0 * kPi * f0 / cfg.sample_rate;
    if (phi > 2.0 * kPi) phi -= 2.0 * kPi;
    double s = 0.0;
    if (ph.voiced) {
      for (int k = 1; k * f0 < nyquist_cap; ++k) {
        s += envelope(ph, spk, k * f0) * std::sin(k * phi);
      }
      s *= 0.05;
    } else {
      s = ph.noise_level * rng.normal();
    }
    wave[n] = s + 1e-3 * rng.normal();
  }
  double peak = 0.0;
  for (double v : wave) peak = std::max(peak, std::abs(v));
  if (peak > 0.0) {
    for (double& v : wave) v *= 0.8 / peak;
  }

  utt.mel = compute_mel(wave, cfg);
  utt.pitch.resize(n_frames);
  for (int t = 0; t < n_frames; ++t) {
    const bool voiced = inventory[utt.phonemes[frame_phone[t]]].voiced;
    utt.pitch[t] = voiced ? static_cast<float>(frame_f0[t]) : 0.0f;
  }
  const auto energy = compute_energy(utt.mel);
  utt.energy.assign(energy.begin(), energy.end());
  if (wave_out != nullptr) *wave_out = std::move(wave);
  return utt;
}

DatasetManifest generate_synthetic_corpus(uint64_t seed, int n_speakers,
                                          int n_utts, const StftConfig& cfg,
                                          const std::filesystem::path& out_dir) {
  if (n_speakers < 1) throw std::invalid_argument("n_speakers must be >= 1");
  if (n_utts < n_speakers) {
    throw std::invalid_argument("n_utts must be >= n_speakers");
  }
  cfg.validate();
  DatasetManifest manifest;
  manifest.root = out_dir;
  for (int s = 0; s < n_speakers; ++s) {
    manifest.speaker_map["spk" + std::to_string(s)] = s;
  }
  for (int i = 0; i < n_utts; ++i) {
    Utterance utt = synthesize_utterance(seed, i, n_speakers, cfg, nullptr);
    utt.validate();
    ManifestEntry e;
    e.id = utt.id;
    e.speaker = utt.speaker;
    e.phonemes = utt.phonemes;
    e.mel = "mel/" + utt.id + ".gsf";
    e.dur = "dur/" + utt.id + ".gsf";
    e.f0 = "f0/" + utt.id + ".gsf";
    e.energy = "energy/" + utt.id + ".gsf";
    write_mel(out_dir / e.mel, utt.mel);
    std::vector<float> dur(utt.durations.begin(), utt.durations.end());
    write_contour(out_dir / e.dur, dur);
    write_contour(out_dir / e.f0, utt.pitch);
    write_contour(out_dir / e.energy, utt.energy);
    manifest.entries.push_back(std::move(e));
  }
  write_manifest(out_dir, manifest);
  return manifest;
}

void write_tensor_file(const std::filesystem::path& path,
                       std::span<const uint32_t> dims,
                       std::span<const float> data) {
  size_t count = 1;
  for (uint32_t d : dims) count *= d;
  if (count != data.size()) {
    throw std::invalid_argument("write_tensor_file: dims do not match payload");
  }
  ensure_parent(path);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write("GSF1", 4);
  put_u32(out, static_cast<uint32_t>(dims.size()));
  for (uint32_t d : dims) put_u32(out, d);
  for (float f : data) put_f32(out, f);
  if (!out) throw DataError("write failed: " + path.string());
}

TensorFile read_tensor_file(const std::filesystem::path& path) {
  const std::vector<char> buf = slurp(path);
  const std::string what = path.string();
  if (buf.size() < 4 || std::memcmp(buf.data(), "GSF1", 4) != 0) {
    throw DataError(what + ": bad magic at offset 0");
  }
  size_t off = 4;
  TensorFile tf;
  const uint32_t rank = get_u32(buf, off, what);
  if (rank > 8) throw DataError(what + ": implausible rank at offset 4");
  size_t count = 1;
  for (uint32_t i = 0; i < rank; ++i) {
    tf.dims.push_back(get_u32(buf, off, what));
    count *= tf.dims.back();
  }
  if (buf.size() - off != count * 4) {
    throw DataError(what + ": payload size mismatch at offset " +
                    std::to_string(off));
  }
  tf.data.resize(count);
  for (size_t i = 0; i < count; ++i) {
    tf.data[i] = std::bit_cast<float>(get_u32(buf, off, what));
  }
  return tf;
}

void write_mel(const std::filesystem::path& path, const MelSpectrogram& mel) {
  const uint32_t dims[2] = {static_cast<uint32_t>(mel.n_frames()),
                            static_cast<uint32_t>(mel.n_bins())};
  write_tensor_file(path, dims,
                    std::span<const float>(mel.data.data(), mel.data.size()));
}

MelSpectrogram read_mel(const std::filesystem::path& path) {
  TensorFile tf = read_tensor_file(path);
  if (tf.dims.size() != 2) throw DataError(path.string() + ": mel must be rank 2");
  MelSpectrogram mel;
  mel.data = Eigen::Map<FloatMatrix>(tf.data.data(), tf.dims[0], tf.dims[1]);
  return mel;
}

void write_contour(const std::filesystem::path& path,
                   std::span<const float> values) {
  const uint32_t dims[1] = {static_cast<uint32_t>(values.size())};
  write_tensor_file(path, dims, values);
}

std::vector<float> read_contour(const std::filesystem::path& path) {
  TensorFile tf = read_tensor_file(path);
  if (tf.dims.size() != 1) {
    throw DataError(path.string() + ": contour must be rank 1");
  }
  return std::move(tf.data);
}

void write_manifest(const std::filesystem::path& dir,
                    const DatasetManifest& manifest) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "manifest.jsonl", std::ios::trunc);
  if (!out) throw DataError("cannot write manifest in " + dir.string());
  for (const auto& e : manifest.entries) {
    json j = {{"id", e.id},         {"speaker", e.speaker},
              {"phonemes", e.phonemes}, {"mel", e.mel},
              {"dur", e.dur},       {"f0", e.f0},
              {"energy", e.energy}};
    out << j.dump() << '\n';
  }
  json spk = json::object();
  for (const auto& [name, id] : manifest.speaker_map) spk[name] = id;
  std::ofstream sout(dir / "speakers.json", std::ios::trunc);
  sout << spk.dump(2) << '\n';
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::filesystem::path file = path;
  if (std::filesystem::is_directory(path)) file = path / "manifest.jsonl";
  std::ifstream in(file);
  if (!in) throw DataError("cannot open manifest " + file.string());
  DatasetManifest m;
  m.root = file.parent_path();
  std::set<std::string> ids;
  std::string line;
  int line_no = 0;
  try {
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      const json j = json::parse(line);
      ManifestEntry e;
      e.id = j.at("id").get<std::string>();
      e.speaker = j.at("speaker").get<int>();
      e.phonemes = j.at("phonemes").get<std::vector<int>>();
      e.mel = j.at("mel").get<std::string>();
      e.dur = j.at("dur").get<std::string>();
      e.f0 = j.at("f0").get<std::string>();
      e.energy = j.at("energy").get<std::string>();
      if (!ids.insert(e.id).second) {
        throw DataError("duplicate utterance id " + e.id);
      }
      m.entries.push_back(std::move(e));
    }
  } catch (const json::exception& ex) {
    throw DataError(file.string() + ":" + std::to_string(line_no) + ": " +
                    ex.what());
  }
  const auto spk_file = m.root / "speakers.json";
  if (std::filesystem::exists(spk_file)) {
    std::ifstream sin(spk_file);
    try {
      const json spk = json::parse(sin);
      for (const auto& [name, id] : spk.items()) m.speaker_map[name] = id.get<int>();
    } catch (const json::exception& ex) {
      throw DataError(spk_file.string() + ": " + ex.what());
    }
  } else {
    int top = -1;
    for (const auto& e : m.entries) top = std::max(top, e.speaker);
    for (int s = 0; s <= top; ++s) m.speaker_map["spk" + std::to_string(s)] = s;
  }
  std::vector<bool> used(m.speaker_map.size(), false);
  for (const auto& [name, id] : m.speaker_map) {
    if (id < 0 || id >= static_cast<int>(used.size()) || used[id]) {
      throw DataError("speaker ids must be dense 0..S-1");
    }
    used[id] = true;
  }
  for (const auto& e : m.entries) {
    if (e.speaker < 0 || e.speaker >= m.n_speakers()) {
      throw DataError(e.id + ": speaker id out of range");
    }
  }
  return m;
}

Utterance load_utterance(const DatasetManifest& manifest,
                         const ManifestEntry& entry) {
  Utterance utt;
  utt.id = entry.id;
  utt.speaker = entry.speaker;
  utt.phonemes = entry.phonemes;
  utt.mel = read_mel(manifest.root / entry.mel);
  for (float d : read_contour(manifest.root / entry.dur)) {
    if (d < 0.0f || d != std::floor(d)) {
      throw DataError(entry.id + ": durations must be non-negative integers");
    }
    utt.durations.push_back(static_cast<int>(d));
  }
  utt.pitch = read_contour(manifest.root / entry.f0);
  utt.energy = read_contour(manifest.root / entry.energy);
  utt.validate();
  return utt;
}

std::vector<Utterance> load_all(const DatasetManifest& manifest) {
  std::vector<Utterance> out;
  out.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) out.push_back(load_utterance(manifest, e));
  return out;
}

}  // namespace advtts
