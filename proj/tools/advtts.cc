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

// Command-line entry point: corpus preparation, both training stages,
// synthesis, evaluation and mel rendering.
//
// Exit codes: 0 success, 2 usage error, 3 data/format error, 4 numerical
// failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "advtts/config.h"
#include "advtts/dataio.h"
#include "advtts/errors.h"
#include "advtts/evaluation.h"
#include "advtts/trainer.h"

namespace {

using namespace advtts;
namespace fs = std::filesystem;

constexpr int kUsage = 2;
constexpr int kData = 3;
constexpr int kNumeric = 4;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string config;
  std::optional<uint64_t> seed;

  std::optional<uint64_t> prepare_seed;
  int speakers = 4;
  int utts = 64;
  std::string out;

  std::string manifest;
  std::string ckpt;
  std::optional<long> steps;
  std::optional<int> batch;
  std::optional<uint64_t> train_seed;
  std::optional<double> fixed_fm;

  std::string phonemes;
  int speaker = 0;
  std::string mel;
};

RunConfig base_config(const Options& o) {
  RunConfig c = o.config.empty() ? RunConfig{} : load_config(o.config);
  if (o.seed) c.train.seed = *o.seed;
  return c;
}

TrainConfig train_config(const Options& o, bool stage2) {
  TrainConfig t = base_config(o).train;
  if (o.train_seed) t.seed = *o.train_seed;
  if (o.batch) t.batch_size = *o.batch;
  if (o.steps) (stage2 ? t.stage2_steps : t.stage1_steps) = *o.steps;
  if (o.fixed_fm) t.fixed_fm = *o.fixed_fm;
  t.ckpt_dir = o.out;
  t.log_path = fs::path(o.out) / (stage2 ? "train_stage2.jsonl" : "train_stage1.jsonl");
  t.validate();
  return t;
}

void print_summary(const char* stage, const TrainResult& r, const fs::path& ckpt) {
  const LossReport& first = r.history.front();
  const LossReport& last = r.history.back();
  std::printf("%s: %zu steps, l_mel %.6f -> %.6f, l_recon %.6f -> %.6f\n", stage,
              r.history.size(), first.l_mel, last.l_mel, first.l_recon, last.l_recon);
  std::printf("checkpoint: %s\n", ckpt.string().c_str());
}

int run_prepare(const Options& o) {
  const RunConfig c = base_config(o);
  const uint64_t seed = o.prepare_seed ? *o.prepare_seed : c.train.seed;
  const DatasetManifest m =
      generate_synthetic_corpus(seed, o.speakers, o.utts, c.stft, o.out);
  std::printf("wrote %zu utterances, %d speakers to %s\n", m.entries.size(),
              m.n_speakers(), o.out.c_str());
  return 0;
}

int run_train_stage1(const Options& o) {
  const TrainConfig t = train_config(o, false);
  const TrainResult r = train_stage1(read_manifest(o.manifest), t);
  print_summary("stage 1", r, t.ckpt_dir / "stage1.gsck");
  return 0;
}

int run_train_stage2(const Options& o) {
  const TrainConfig t = train_config(o, true);
  const Checkpoint ckpt = load_checkpoint(o.ckpt);
  const TrainResult r = train_stage2(ckpt, read_manifest(o.manifest), t);
  print_summary("stage 2", r, t.ckpt_dir / "stage2.gsck");
  return 0;
}

std::vector<int> parse_ids(const std::string& text) {
  std::istringstream in(text);
  std::vector<int> ids;
  std::string token;
  while (in >> token) {
    size_t used = 0;
    int v = 0;
    try {
      v = std::stoi(token, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != token.size()) throw UsageError("bad phoneme id \"" + token + "\"");
    ids.push_back(v);
  }
  if (ids.empty()) throw UsageError("--phonemes is empty");
  return ids;
}

int run_synth(const Options& o) {
  const std::vector<int> ids = parse_ids(o.phonemes);
  const auto gen = restore_generator(load_checkpoint(o.ckpt));
  const MelSpectrogram mel = gen->forward_infer(ids, o.speaker);
  write_mel(o.out, mel);
  std::printf("wrote %d x %d mel to %s\n", mel.n_frames(), mel.n_bins(), o.out.c_str());
  return 0;
}

int run_eval(const Options& o) {
  const EvalReport r = evaluate(load_checkpoint(o.ckpt), read_manifest(o.manifest));
  for (const auto& u : r.utterances) {
    if (u.f0_no_overlap) {
      std::fprintf(stderr, "warning: %s has no co-voiced frames; F0 RMSE set to 0\n",
                   u.id.c_str());
    }
  }
  std::ofstream out(o.out, std::ios::trunc);
  if (!out) throw DataError("cannot write " + o.out);
  out << r.to_json() << '\n';
  if (!out) throw DataError("write failed: " + o.out);
  std::printf("%zu utterances: MCD %.4f dB, F0 RMSE %.4f Hz\n", r.utterances.size(),
              r.mean_mcd_db, r.mean_f0_rmse_hz);
  return 0;
}

int run_plot(const Options& o) {
  const MelSpectrogram mel = read_mel(o.mel);
  render_mel(mel, o.out);
  std::printf("wrote %d x %d image to %s\n", mel.n_frames(), mel.n_bins(), o.out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial multi-speaker mel-spectrogram synthesis"};
  app.require_subcommand(1);
  Options o;
  app.add_option("--config", o.config, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", o.seed, "Global seed");

  auto* prepare = app.add_subcommand("prepare", "Generate the synthetic corpus");
  prepare->add_option("--seed", o.prepare_seed, "Corpus seed");
  prepare->add_option("--speakers", o.speakers, "Speaker count")->check(CLI::PositiveNumber);
  prepare->add_option("--utts", o.utts, "Utterance count")->check(CLI::PositiveNumber);
  prepare->add_option("--out", o.out, "Output directory")->required();

  auto* stage1 = app.add_subcommand("train-stage1", "Generator-only pretraining");
  auto* stage2 = app.add_subcommand("train-stage2", "Joint adversarial training");
  for (auto* sub : {stage1, stage2}) {
    sub->add_option("--manifest", o.manifest, "Manifest file or corpus directory")
        ->required();
    sub->add_option("--out", o.out, "Output directory for checkpoint and log")->required();
    sub->add_option("--steps", o.steps, "Training steps")->check(CLI::PositiveNumber);
    sub->add_option("--batch", o.batch, "Batch size")->check(CLI::PositiveNumber);
    sub->add_option("--seed", o.train_seed, "Training seed");
  }
  stage2->add_option("--ckpt", o.ckpt, "Stage-1 or stage-2 checkpoint")->required();
  stage2->add_option("--fixed-fm", o.fixed_fm,
                     "Use a constant feature-matching weight instead of the ratio")
      ->check(CLI::NonNegativeNumber);

  auto* synth = app.add_subcommand("synth", "Free-running synthesis of one utterance");
  synth->add_option("--ckpt", o.ckpt, "Checkpoint")->required();
  synth->add_option("--phonemes", o.phonemes, "Space-separated phoneme ids")->required();
  synth->add_option("--speaker", o.speaker, "Speaker id");
  synth->add_option("--out", o.out, "Output mel file")->required();

  auto* eval = app.add_subcommand("eval", "Teacher-forced MCD and F0 RMSE");
  eval->add_option("--ckpt", o.ckpt, "Checkpoint")->required();
  eval->add_option("--manifest", o.manifest, "Manifest file or corpus directory")->required();
  eval->add_option("--out", o.out, "Report JSON path")->required();

  auto* plot = app.add_subcommand("plot", "Render a mel file as a PGM image");
  plot->add_option("--mel", o.mel, "Mel file")->required();
  plot->add_option("--out", o.out, "Output PGM path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsage;
  }

  try {
    if (prepare->parsed()) return run_prepare(o);
    if (stage1->parsed()) return run_train_stage1(o);
    if (stage2->parsed()) return run_train_stage2(o);
    if (synth->parsed()) return run_synth(o);
    if (eval->parsed()) return run_eval(o);
    if (plot->parsed()) return run_plot(o);
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kNumeric;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kData;
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return kUsage;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return kUsage;
  } catch (const std::out_of_range& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kData;
  }
  return kUsage;
}
