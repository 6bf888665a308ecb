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

#include "advtts/config.h"

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "advtts/errors.h"
#include "json.hpp"

namespace advtts {
namespace {

using json = nlohmann::json;

// Reads the keys of one JSON object into fields, rejecting anything else.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw std::invalid_argument(where_ + ": expected an object");
  }
  ~ObjectReader() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) {
        throw std::invalid_argument(where_ + ": unknown key \"" + key + "\"");
      }
    }
  }

  template <typename T>
  void read(const char* key, T& field) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      field = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw std::invalid_argument(where_ + "." + key + ": wrong type");
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

void read_stft(const json& j, StftConfig& c) {
  ObjectReader r(j, "stft");
  r.read("sample_rate", c.sample_rate);
  r.read("frame_length", c.frame_length);
  r.read("hop_length", c.hop_length);
  r.read("mel_bins", c.mel_bins);
  r.read("fmin", c.fmin);
  r.read("fmax", c.fmax);
  r.read("log_floor", c.log_floor);
}

void read_weights(const json& j, LossWeights& w) {
  ObjectReader r(j, "weights");
  r.read("lambda_d", w.lambda_d);
  r.read("lambda_p", w.lambda_p);
  r.read("lambda_e", w.lambda_e);
  r.read("lambda_fm_cap", w.lambda_fm_cap);
}

void read_generator(const json& j, GeneratorConfig& g) {
  ObjectReader r(j, "generator");
  r.read("vocab_size", g.vocab_size);
  r.read("hidden_dim", g.hidden_dim);
  r.read("n_blocks_enc", g.n_blocks_enc);
  r.read("n_blocks_dec", g.n_blocks_dec);
  r.read("n_heads", g.n_heads);
  r.read("conv_kernel", g.conv_kernel);
  r.read("conv_filter_dim", g.conv_filter_dim);
  r.read("n_speakers", g.n_speakers);
  r.read("speaker_dim", g.speaker_dim);
  r.read("reduction_factor", g.reduction_factor);
  r.read("max_frames", g.max_frames);
  r.read("mel_bins", g.mel_bins);
  r.read("variance_bins", g.variance_bins);
  if (const json* v = r.child("variance")) {
    ObjectReader rv(*v, "generator.variance");
    rv.read("kernel", g.variance.kernel);
    rv.read("filter", g.variance.filter);
    rv.read("dropout", g.variance.dropout);
  }
}

void read_discriminator(const json& j, DiscriminatorConfig& d) {
  ObjectReader r(j, "discriminator");
  r.read("in_channels", d.in_channels);
  r.read("shared_channels", d.shared_channels);
  r.read("shared_kernels", d.shared_kernels);
  r.read("shared_strides", d.shared_strides);
  r.read("head_channels", d.head_channels);
  r.read("head_kernels", d.head_kernels);
  r.read("head_strides", d.head_strides);
  r.read("leaky_slope", d.leaky_slope);
  r.read("cond_proj_dim", d.cond_proj_dim);
  r.read("speaker_dim", d.speaker_dim);
}

void read_train(const json& j, TrainConfig& t) {
  ObjectReader r(j, "train");
  r.read("batch_size", t.batch_size);
  r.read("lr", t.lr);
  r.read("beta1", t.beta1);
  r.read("beta2", t.beta2);
  r.read("eps", t.eps);
  r.read("lr_halve_every", t.lr_halve_every);
  r.read("stage1_steps", t.stage1_steps);
  r.read("stage2_steps", t.stage2_steps);
  r.read("d_window", t.d_window);
  r.read("seed", t.seed);
  if (const json* f = r.child("fixed_fm")) {
    if (!f->is_null()) {
      if (!f->is_number()) throw std::invalid_argument("train.fixed_fm: wrong type");
      t.fixed_fm = f->get<double>();
    }
  }
}

}  // namespace

RunConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  RunConfig c;
  {
    ObjectReader r(j, "config");
    if (const json* s = r.child("stft")) read_stft(*s, c.stft);
    if (const json* t = r.child("train")) read_train(*t, c.train);
    if (const json* w = r.child("weights")) read_weights(*w, c.train.weights);
    if (const json* g = r.child("generator")) read_generator(*g, c.train.generator);
    if (const json* d = r.child("discriminator")) {
      read_discriminator(*d, c.train.discriminator);
    }
  }
  c.stft.validate();
  c.train.validate();
  c.train.generator.validate();
  c.train.discriminator.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

}  // namespace advtts
