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

#include "advtts/trainer.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

#include "advtts/errors.h"
#include "json.hpp"

namespace advtts {
namespace {

constexpr uint64_t kGenSeed = 1, kDiscSeed = 2, kScheduleSeed = 3,
                   kDropoutSeed = 4, kCropSeed = 5;

NamedTensor from_matrix(std::string name, const ad::Matrix& m) {
  NamedTensor t;
  t.name = std::move(name);
  t.dims = {static_cast<uint32_t>(m.rows()), static_cast<uint32_t>(m.cols())};
  t.data.resize(m.size());
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    t.data[i] = static_cast<float>(m.data()[i]);
  }
  return t;
}

NamedTensor from_values(std::string name, const std::vector<double>& v) {
  NamedTensor t;
  t.name = std::move(name);
  t.dims = {static_cast<uint32_t>(v.size())};
  for (double x : v) t.data.push_back(static_cast<float>(x));
  return t;
}

ad::Matrix to_matrix(const NamedTensor& t, Eigen::Index rows, Eigen::Index cols) {
  if (t.dims.size() != 2 || t.dims[0] != rows || t.dims[1] != cols) {
    throw DataError("checkpoint tensor " + t.name + " has unexpected shape");
  }
  ad::Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = t.data[i];
  return m;
}

const NamedTensor& require_tensor(const Checkpoint& c, const std::string& name) {
  const NamedTensor* t = c.find(name);
  if (t == nullptr) throw DataError("checkpoint is missing " + name);
  return *t;
}

// Field order of the serialized configuration echoes.
std::vector<double> encode(const GeneratorConfig& c) {
  return {double(c.vocab_size),      double(c.hidden_dim),
          double(c.n_blocks_enc),    double(c.n_blocks_dec),
          double(c.n_heads),         double(c.conv_kernel),
          double(c.conv_filter_dim), double(c.n_speakers),
          double(c.speaker_dim),     double(c.reduction_factor),
          double(c.max_frames),      double(c.mel_bins),
          double(c.variance_bins),   double(c.variance.kernel),
          double(c.variance.filter), c.variance.dropout};
}

GeneratorConfig decode_generator_config(const NamedTensor& t) {
  if (t.data.size() != 16) throw DataError("bad meta.generator_config");
  const auto& v = t.data;
  GeneratorConfig c;
  c.vocab_size = int(v[0]);
  c.hidden_dim = int(v[1]);
  c.n_blocks_enc = int(v[2]);
  c.n_blocks_dec = int(v[3]);
  c.n_heads = int(v[4]);
  c.conv_kernel = int(v[5]);
  c.conv_filter_dim = int(v[6]);
  c.n_speakers = int(v[7]);
  c.speaker_dim = int(v[8]);
  c.reduction_factor = int(v[9]);
  c.max_frames = int(v[10]);
  c.mel_bins = int(v[11]);
  c.variance_bins = int(v[12]);
  c.variance.kernel = int(v[13]);
  c.variance.filter = int(v[14]);
  c.variance.dropout = v[15];
  return c;
}

std::vector<double> encode(const DiscriminatorConfig& c) {
  std::vector<double> v = {double(c.in_channels), double(c.cond_proj_dim),
                           double(c.speaker_dim), c.leaky_slope,
                           double(c.shared_channels.size())};
  for (auto* list : {&c.shared_channels, &c.shared_kernels, &c.shared_strides}) {
    for (int x : *list) v.push_back(x);
  }
  v.push_back(double(c.head_channels.size()));
  for (auto* list : {&c.head_channels, &c.head_kernels, &c.head_strides}) {
    for (int x : *list) v.push_back(x);
  }
  return v;
}

DiscriminatorConfig decode_discriminator_config(const NamedTensor& t) {
  const auto& v = t.data;
  size_t i = 0;
  auto next = [&]() -> double {
    if (i >= v.size()) throw DataError("bad meta.discriminator_config");
    return v[i++];
  };
  DiscriminatorConfig c;
  c.in_channels = int(next());
  c.cond_proj_dim = int(next());
  c.speaker_dim = int(next());
  c.leaky_slope = next();
  const int n_shared = int(next());
  for (auto* list : {&c.shared_channels, &c.shared_kernels, &c.shared_strides}) {
    list->clear();
    for (int k = 0; k < n_shared; ++k) list->push_back(int(next()));
  }
  const int n_head = int(next());
  for (auto* list : {&c.head_channels, &c.head_kernels, &c.head_strides}) {
    list->clear();
    for (int k = 0; k < n_head; ++k) list->push_back(int(next()));
  }
  return c;
}

void load_params(const Checkpoint& c, const nn::ParamList& params) {
  for (const auto& p : params) {
    const NamedTensor& t = require_tensor(c, p.name);
    p.var.node()->value = to_matrix(t, p.var.rows(), p.var.cols());
  }
}

void save_adam(Checkpoint& c, const std::string& prefix, Adam& opt) {
  c.optimizer.push_back(
      from_values(prefix + ".t", {static_cast<double>(opt.steps_taken())}));
  const auto& params = opt.params();
  for (size_t i = 0; i < params.size(); ++i) {
    c.optimizer.push_back(
        from_matrix(prefix + ".m/" + params[i].name, opt.first_moments()[i]));
    c.optimizer.push_back(
        from_matrix(prefix + ".v/" + params[i].name, opt.second_moments()[i]));
  }
}

void load_adam(const Checkpoint& c, const std::string& prefix, Adam& opt) {
  const NamedTensor* t = c.find_optimizer(prefix + ".t");
  if (t == nullptr || t->data.size() != 1) {
    throw DataError("checkpoint is missing " + prefix + " state");
  }
  opt.set_steps_taken(static_cast<long>(t->data[0]));
  const auto& params = opt.params();
  for (size_t i = 0; i < params.size(); ++i) {
    const NamedTensor* m = c.find_optimizer(prefix + ".m/" + params[i].name);
    const NamedTensor* v = c.find_optimizer(prefix + ".v/" + params[i].name);
    if (m == nullptr || v == nullptr) {
      throw DataError("checkpoint is missing moments for " + params[i].name);
    }
    opt.first_moments()[i] = to_matrix(*m, params[i].var.rows(), params[i].var.cols());
    opt.second_moments()[i] = to_matrix(*v, params[i].var.rows(), params[i].var.cols());
  }
}

void put_bytes(std::string& out, const void* p, size_t n) {
  out.append(static_cast<const char*>(p), n);
}

void put_u32(std::string& out, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  put_bytes(out, b, 4);
}

void put_table(std::string& out, const std::vector<NamedTensor>& table) {
  put_u32(out, static_cast<uint32_t>(table.size()));
  for (const auto& t : table) {
    put_u32(out, static_cast<uint32_t>(t.name.size()));
    put_bytes(out, t.name.data(), t.name.size());
    put_u32(out, static_cast<uint32_t>(t.dims.size()));
    for (uint32_t d : t.dims) put_u32(out, d);
    for (float f : t.data) put_u32(out, std::bit_cast<uint32_t>(f));
  }
}

class Reader {
 public:
  explicit Reader(std::vector<char> buf) : buf_(std::move(buf)) {}

  [[noreturn]] void fail(const std::string& what) const {
    throw DataError("corrupt checkpoint: " + what + " at offset " +
                    std::to_string(off_));
  }
  void need(size_t n, const char* what) const {
    if (buf_.size() - off_ < n) fail(std::string("truncated ") + what);
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<uint32_t>(static_cast<unsigned char>(buf_[off_ + i])) << (8 * i);
    }
    off_ += 4;
    return v;
  }
  uint64_t u64(const char* what) {
    const uint64_t lo = u32(what);
    const uint64_t hi = u32(what);
    return lo | (hi << 32);
  }
  uint8_t u8(const char* what) {
    need(1, what);
    return static_cast<uint8_t>(buf_[off_++]);
  }
  std::string bytes(size_t n, const char* what) {
    need(n, what);
    std::string s(buf_.data() + off_, n);
    off_ += n;
    return s;
  }
  std::vector<NamedTensor> table() {
    const uint32_t count = u32("entry count");
    std::vector<NamedTensor> out;
    for (uint32_t e = 0; e < count; ++e) {
      NamedTensor t;
      const uint32_t len = u32("name length");
      if (len > 4096) fail("implausible name length");
      t.name = bytes(len, "name");
      const uint32_t rank = u32("rank");
      if (rank > 8) fail("implausible rank");
      uint64_t n = 1;
      for (uint32_t r = 0; r < rank; ++r) {
        t.dims.push_back(u32("dims"));
        n *= t.dims.back();
      }
      if (n > (buf_.size() - off_) / 4) fail("truncated payload of " + t.name);
      t.data.resize(n);
      for (uint64_t i = 0; i < n; ++i) t.data[i] = std::bit_cast<float>(u32("payload"));
      out.push_back(std::move(t));
    }
    return out;
  }
  size_t offset() const { return off_; }
  size_t size() const { return buf_.size(); }

 private:
  std::vector<char> buf_;
  size_t off_ = 0;
};

}  // namespace

void TrainConfig::validate() const {
  if (batch_size <= 0 || lr_halve_every <= 0 || stage1_steps <= 0 ||
      stage2_steps <= 0 || d_window <= 0) {
    throw std::invalid_argument("TrainConfig: counts must be positive");
  }
  if (!(lr > 0.0)) throw std::invalid_argument("TrainConfig: lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && eps > 0.0)) {
    throw std::invalid_argument("TrainConfig: invalid Adam constants");
  }
  if (fixed_fm && *fixed_fm < 0.0) {
    throw std::invalid_argument("TrainConfig: fixed_fm must be non-negative");
  }
  weights.validate();
}

double learning_rate(const TrainConfig& cfg, long step) {
  return cfg.lr * std::pow(0.5, static_cast<double>(step / cfg.lr_halve_every));
}

Adam::Adam(nn::ParamList params, double beta1, double beta2, double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.push_back(ad::Matrix::Zero(p.var.rows(), p.var.cols()));
    v_.push_back(ad::Matrix::Zero(p.var.rows(), p.var.cols()));
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.var.zero_grad();
}

void Adam::step(double lr) {
  for (const auto& p : params_) {
    if (p.var.has_grad() && !p.var.node()->grad.allFinite()) {
      throw NumericError("non-finite gradient in " + p.name);
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    ad::Var& var = params_[i].var;
    const ad::Matrix g = var.grad();
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseProduct(g);
    nn::round_to_f32(m_[i]);
    nn::round_to_f32(v_[i]);
    ad::Matrix& w = var.mutable_value();
    w.array() -= lr * (m_[i].array() / c1) /
                 ((v_[i].array() / c2).sqrt() + eps_);
    nn::round_to_f32(w);
  }
}

const NamedTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

const NamedTensor* Checkpoint::find_optimizer(const std::string& name) const {
  for (const auto& t : optimizer) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

bool Checkpoint::has_discriminator() const {
  return find("meta.discriminator_config") != nullptr;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::string out;
  put_bytes(out, "GSCK", 4);
  put_u32(out, kCheckpointVersion);
  put_table(out, ckpt.tensors);
  put_table(out, ckpt.optimizer);
  put_u32(out, static_cast<uint32_t>(ckpt.step & 0xffffffffu));
  put_u32(out, static_cast<uint32_t>(ckpt.step >> 32));
  out.push_back(static_cast<char>(ckpt.stage));
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write checkpoint " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw DataError("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint " + path.string());
  Reader r(std::vector<char>(std::istreambuf_iterator<char>(f), {}));
  if (r.bytes(4, "magic") != "GSCK") r.fail("bad magic");
  const uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) r.fail("unsupported version");
  Checkpoint c;
  c.tensors = r.table();
  c.optimizer = r.table();
  c.step = r.u64("step");
  c.stage = r.u8("stage");
  if (c.stage != 1 && c.stage != 2) r.fail("bad stage tag");
  if (r.offset() != r.size()) r.fail("trailing bytes");
  return c;
}

std::unique_ptr<Generator> restore_generator(const Checkpoint& ckpt) {
  const GeneratorConfig cfg =
      decode_generator_config(require_tensor(ckpt, "meta.generator_config"));
  const NamedTensor& s = require_tensor(ckpt, "meta.variance_stats");
  if (s.data.size() != 8) throw DataError("bad meta.variance_stats");
  VarianceStats stats;
  stats.pitch_mean = s.data[0];
  stats.pitch_std = s.data[1];
  stats.energy_mean = s.data[2];
  stats.energy_std = s.data[3];
  stats.pitch_min = s.data[4];
  stats.pitch_max = s.data[5];
  stats.energy_min = s.data[6];
  stats.energy_max = s.data[7];
  auto gen = std::make_unique<Generator>(cfg, stats, 0);
  load_params(ckpt, gen->parameters());
  return gen;
}

std::unique_ptr<Discriminator> restore_discriminator(const Checkpoint& ckpt) {
  const NamedTensor* t = ckpt.find("meta.discriminator_config");
  if (t == nullptr) return nullptr;
  auto disc = std::make_unique<Discriminator>(decode_discriminator_config(*t), 0);
  load_params(ckpt, disc->parameters());
  return disc;
}

void append_log(std::ostream& os, const LossReport& r) {
  nlohmann::json j = {{"step", r.step},
                      {"stage", r.stage},
                      {"l_mel", r.l_mel},
                      {"l_dur", r.l_dur},
                      {"l_pitch", r.l_pitch},
                      {"l_energy", r.l_energy},
                      {"l_recon", r.l_recon},
                      {"l_d", r.l_d},
                      {"l_g_adv", r.l_g_adv},
                      {"l_fm", r.l_fm},
                      {"lambda_fm", r.lambda_fm},
                      {"lambda_clamped", r.lambda_clamped},
                      {"l_g_total", r.l_g_total},
                      {"lr", r.lr}};
  os << j.dump() << '\n';
}

BatchSchedule::BatchSchedule(size_t n_items, int batch_size, uint64_t seed)
    : n_(n_items), batch_(batch_size), seed_(seed) {
  if (n_ == 0) throw std::invalid_argument("BatchSchedule: empty corpus");
}

void BatchSchedule::reshuffle() {
  ++epoch_;
  order_.resize(n_);
  for (size_t i = 0; i < n_; ++i) order_[i] = i;
  Rng rng(Rng::derive(seed_, static_cast<uint64_t>(epoch_)));
  for (size_t i = n_; i > 1; --i) {
    const size_t j = rng.next() % i;
    std::swap(order_[i - 1], order_[j]);
  }
  cursor_ = 0;
}

std::vector<size_t> BatchSchedule::next() {
  if (epoch_ < 0 || cursor_ >= n_) reshuffle();
  const size_t take = std::min(static_cast<size_t>(batch_), n_ - cursor_);
  std::vector<size_t> out(order_.begin() + cursor_, order_.begin() + cursor_ + take);
  cursor_ += take;
  return out;
}

TrainingSession::TrainingSession(const TrainConfig& cfg,
                                 std::vector<Utterance> corpus, int n_speakers)
    : cfg_(cfg),
      corpus_(std::move(corpus)),
      schedule_(corpus_.size(), cfg.batch_size, Rng::derive(cfg.seed, kScheduleSeed)),
      dropout_rng_(Rng::derive(cfg.seed, kDropoutSeed)),
      crop_rng_(Rng::derive(cfg.seed, kCropSeed)) {
  cfg_.validate();
  GeneratorConfig gcfg = cfg_.generator;
  gcfg.n_speakers = n_speakers;
  int vocab = 0;
  for (const auto& u : corpus_) {
    for (int p : u.phonemes) vocab = std::max(vocab, p + 1);
    if (u.speaker >= n_speakers) {
      throw DataError(u.id + ": speaker id exceeds speaker count");
    }
  }
  gcfg.vocab_size = std::max(gcfg.vocab_size, vocab);
  gen_ = std::make_unique<Generator>(gcfg, VarianceStats::from_corpus(corpus_),
                                     Rng::derive(cfg_.seed, kGenSeed));
  opt_g_ = std::make_unique<Adam>(gen_->parameters(), cfg_.beta1, cfg_.beta2,
                                  cfg_.eps);
}

TrainingSession::TrainingSession(const TrainConfig& cfg,
                                 std::vector<Utterance> corpus,
                                 const Checkpoint& ckpt)
    : cfg_(cfg),
      corpus_(std::move(corpus)),
      schedule_(corpus_.size(), cfg.batch_size,
                Rng::derive(cfg.seed, 10 + kScheduleSeed)),
      dropout_rng_(Rng::derive(cfg.seed, 10 + kDropoutSeed)),
      crop_rng_(Rng::derive(cfg.seed, 10 + kCropSeed)),
      stage_(2),
      global_step_(ckpt.step) {
  cfg_.validate();
  gen_ = restore_generator(ckpt);
  for (const auto& u : corpus_) {
    if (u.speaker >= gen_->config().n_speakers) {
      throw DataError(u.id + ": speaker id exceeds the checkpoint speaker table");
    }
  }
  opt_g_ = std::make_unique<Adam>(gen_->parameters(), cfg_.beta1, cfg_.beta2,
                                  cfg_.eps);
  if (ckpt.stage == 2 && ckpt.has_discriminator()) {
    disc_ = restore_discriminator(ckpt);
    opt_d_ = std::make_unique<Adam>(disc_->parameters(), cfg_.beta1, cfg_.beta2,
                                    cfg_.eps);
    load_adam(ckpt, "adam.gen", *opt_g_);
    load_adam(ckpt, "adam.disc", *opt_d_);
    if (const NamedTensor* s = ckpt.find("meta.stage_step")) {
      stage_step_ = static_cast<long>(s->data.at(0));
    }
  } else {
    DiscriminatorConfig dcfg = cfg_.discriminator;
    dcfg.in_channels = gen_->config().mel_bins;
    dcfg.speaker_dim = gen_->config().speaker_dim;
    disc_ = std::make_unique<Discriminator>(dcfg, Rng::derive(cfg_.seed, kDiscSeed));
    opt_d_ = std::make_unique<Adam>(disc_->parameters(), cfg_.beta1, cfg_.beta2,
                                    cfg_.eps);
  }
}

void TrainingSession::ensure_finite(const LossReport& r) const {
  const double values[] = {r.l_mel, r.l_dur,   r.l_pitch, r.l_energy, r.l_recon,
                           r.l_d,   r.l_g_adv, r.l_fm,    r.lambda_fm, r.l_g_total};
  for (double v : values) {
    if (!std::isfinite(v)) {
      std::ostringstream os;
      os << "non-finite loss at stage " << r.stage << " step " << r.step
         << ": l_mel=" << r.l_mel << " l_dur=" << r.l_dur
         << " l_pitch=" << r.l_pitch << " l_energy=" << r.l_energy
         << " l_d=" << r.l_d << " l_g_adv=" << r.l_g_adv << " l_fm=" << r.l_fm;
      throw NumericError(os.str());
    }
  }
}

LossReport TrainingSession::stage1_step() {
  if (stage_ != 1) throw std::logic_error("stage1_step on a stage-2 session");
  const std::vector<size_t> batch = schedule_.next();
  const double inv = 1.0 / static_cast<double>(batch.size());
  LossReport r;
  r.stage = 1;
  r.step = static_cast<long>(global_step_) + 1;
  ad::Var total;
  for (size_t idx : batch) {
    const Utterance& u = corpus_[idx];
    const GeneratorOutput out = gen_->forward_train(u, &dropout_rng_);
    const ReconLoss l = recon_loss(out, gen_->targets(u), cfg_.weights);
    r.l_mel += l.mel.scalar() * inv;
    r.l_dur += l.duration.scalar() * inv;
    r.l_pitch += l.pitch.scalar() * inv;
    r.l_energy += l.energy.scalar() * inv;
    r.l_recon += l.total.scalar() * inv;
    total = total.valid() ? ad::add(total, l.total) : l.total;
  }
  r.l_g_total = r.l_recon;
  ensure_finite(r);
  opt_g_->zero_grad();
  ad::backward(ad::scale(total, inv));
  r.lr = learning_rate(cfg_, stage_step_);
  opt_g_->step(r.lr);
  ++stage_step_;
  ++global_step_;
  return r;
}

AdversarialBatch TrainingSession::generator_forward(std::span<const size_t> batch) {
  AdversarialBatch b;
  for (size_t idx : batch) {
    const Utterance& u = corpus_[idx];
    b.outputs.push_back(gen_->forward_train(u, &dropout_rng_));
    b.recon.push_back(recon_loss(b.outputs.back(), gen_->targets(u), cfg_.weights));
    const ad::Var real = ad::constant(u.mel.data.cast<double>());
    b.windows.push_back(crop_pair(real, b.outputs.back().mel, cfg_.d_window, crop_rng_));
    b.speakers.push_back(ad::detach(gen_->speaker_embedding(u.speaker)));
  }
  return b;
}

double TrainingSession::accumulate_discriminator_grads(AdversarialBatch& b) {
  opt_g_->zero_grad();
  opt_d_->zero_grad();
  const double inv = 1.0 / static_cast<double>(b.outputs.size());
  ad::Var total;
  for (size_t i = 0; i < b.outputs.size(); ++i) {
    const JcuOutput real = disc_->discriminate(b.windows[i].real, b.speakers[i]);
    const JcuOutput fake =
        disc_->discriminate(ad::detach(b.windows[i].fake), b.speakers[i]);
    const ad::Var l = d_loss_jcu(real, fake);
    total = total.valid() ? ad::add(total, l) : l;
  }
  total = ad::scale(total, inv);
  ad::backward(total);
  return total.scalar();
}

LossReport TrainingSession::accumulate_generator_grads(AdversarialBatch& b) {
  opt_g_->zero_grad();
  opt_d_->zero_grad();
  const double inv = 1.0 / static_cast<double>(b.outputs.size());
  for (const auto& p : disc_->parameters()) p.var.set_requires_grad(false);
  LossReport r;
  r.stage = 2;
  ad::Var adv, fm, recon;
  for (size_t i = 0; i < b.outputs.size(); ++i) {
    const JcuOutput real = disc_->discriminate(b.windows[i].real, b.speakers[i]);
    const JcuOutput fake = disc_->discriminate(b.windows[i].fake, b.speakers[i]);
    std::vector<ad::Var> real_feats;
    for (const auto& f : real.features) real_feats.push_back(ad::detach(f));
    const ad::Var l_fm = feature_matching(real_feats, fake.features);
    const ad::Var l_adv = g_adv_loss(fake);
    const ReconLoss& l = b.recon[i];
    r.l_mel += l.mel.scalar() * inv;
    r.l_dur += l.duration.scalar() * inv;
    r.l_pitch += l.pitch.scalar() * inv;
    r.l_energy += l.energy.scalar() * inv;
    adv = adv.valid() ? ad::add(adv, l_adv) : l_adv;
    fm = fm.valid() ? ad::add(fm, l_fm) : l_fm;
    recon = recon.valid() ? ad::add(recon, l.total) : l.total;
  }
  adv = ad::scale(adv, inv);
  fm = ad::scale(fm, inv);
  recon = ad::scale(recon, inv);
  r.l_g_adv = adv.scalar();
  r.l_fm = fm.scalar();
  r.l_recon = recon.scalar();
  if (cfg_.fixed_fm) {
    r.lambda_fm = *cfg_.fixed_fm;
  } else {
    r.lambda_fm = fm_scale(r.l_recon, r.l_fm, cfg_.weights.lambda_fm_cap);
    r.lambda_clamped = !(r.l_fm > 0.0) || r.l_recon / r.l_fm > cfg_.weights.lambda_fm_cap;
  }
  const ad::Var total = g_total_loss(adv, r.lambda_fm, fm, recon);
  r.l_g_total = total.scalar();
  try {
    ensure_finite(r);
    ad::backward(total);
  } catch (...) {
    for (const auto& p : disc_->parameters()) p.var.set_requires_grad(true);
    throw;
  }
  for (const auto& p : disc_->parameters()) p.var.set_requires_grad(true);
  return r;
}

LossReport TrainingSession::stage2_step() {
  if (stage_ != 2) throw std::logic_error("stage2_step on a stage-1 session");
  const std::vector<size_t> batch = schedule_.next();
  const double lr = learning_rate(cfg_, stage_step_);
  AdversarialBatch b = generator_forward(batch);
  const double l_d = accumulate_discriminator_grads(b);
  if (!std::isfinite(l_d)) {
    throw NumericError("non-finite discriminator loss at stage 2 step " +
                       std::to_string(global_step_ + 1));
  }
  opt_d_->step(lr);
  LossReport r = accumulate_generator_grads(b);
  opt_g_->step(lr);
  r.l_d = l_d;
  r.lr = lr;
  r.step = static_cast<long>(global_step_) + 1;
  ++stage_step_;
  ++global_step_;
  return r;
}

Checkpoint TrainingSession::checkpoint() const {
  Checkpoint c;
  c.step = global_step_;
  c.stage = static_cast<uint8_t>(stage_);
  c.tensors.push_back(from_values("meta.generator_config", encode(gen_->config())));
  const VarianceStats& s = gen_->stats();
  c.tensors.push_back(from_values(
      "meta.variance_stats", {s.pitch_mean, s.pitch_std, s.energy_mean, s.energy_std,
                              s.pitch_min, s.pitch_max, s.energy_min, s.energy_max}));
  c.tensors.push_back(from_values(
      "meta.train_config",
      {double(cfg_.batch_size), cfg_.lr, cfg_.beta1, cfg_.beta2, cfg_.eps,
       double(cfg_.lr_halve_every), double(cfg_.d_window)}));
  c.tensors.push_back(from_values("meta.stage_step", {double(stage_step_)}));
  if (disc_) {
    c.tensors.push_back(
        from_values("meta.discriminator_config", encode(disc_->config())));
  }
  for (const auto& p : gen_->parameters()) {
    c.tensors.push_back(from_matrix(p.name, p.var.value()));
  }
  if (disc_) {
    for (const auto& p : disc_->parameters()) {
      c.tensors.push_back(from_matrix(p.name, p.var.value()));
    }
  }
  save_adam(c, "adam.gen", *opt_g_);
  if (opt_d_) save_adam(c, "adam.disc", *opt_d_);
  return c;
}

namespace {

std::unique_ptr<std::ofstream> open_log(const TrainConfig& cfg) {
  if (cfg.log_path.empty()) return nullptr;
  if (cfg.log_path.has_parent_path()) {
    std::filesystem::create_directories(cfg.log_path.parent_path());
  }
  auto f = std::make_unique<std::ofstream>(cfg.log_path, std::ios::trunc);
  if (!*f) throw DataError("cannot write log " + cfg.log_path.string());
  return f;
}

}  // namespace

TrainResult train_stage1(const DatasetManifest& manifest, const TrainConfig& cfg) {
  if (manifest.entries.empty()) throw DataError("train_stage1: empty manifest");
  TrainingSession session(cfg, load_all(manifest), manifest.n_speakers());
  auto log = open_log(cfg);
  TrainResult result;
  for (long s = 0; s < cfg.stage1_steps; ++s) {
    result.history.push_back(session.stage1_step());
    if (log) append_log(*log, result.history.back());
  }
  result.checkpoint = session.checkpoint();
  if (!cfg.ckpt_dir.empty()) {
    save_checkpoint(result.checkpoint, cfg.ckpt_dir / "stage1.gsck");
  }
  return result;
}

TrainResult train_stage2(const Checkpoint& ckpt, const DatasetManifest& manifest,
                         const TrainConfig& cfg) {
  if (manifest.entries.empty()) throw DataError("train_stage2: empty manifest");
  TrainingSession session(cfg, load_all(manifest), ckpt);
  auto log = open_log(cfg);
  TrainResult result;
  for (long s = 0; s < cfg.stage2_steps; ++s) {
    result.history.push_back(session.stage2_step());
    if (log) append_log(*log, result.history.back());
  }
  result.checkpoint = session.checkpoint();
  if (!cfg.ckpt_dir.empty()) {
    save_checkpoint(result.checkpoint, cfg.ckpt_dir / "stage2.gsck");
  }
  return result;
}

}  // namespace advtts
