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

#include <cmath>
#include <fstream>
#include <iterator>
#include <set>

#include <gtest/gtest.h>
#include "json.hpp"

#include "advtts/errors.h"
#include "test_util.h"

namespace advtts {
namespace {

using ad::Matrix;
using testing::bit_equal;
using testing::TempDir;

std::vector<char> slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

float f32(double x) { return static_cast<float>(x); }

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.batch_size = 2;
  cfg.stage1_steps = 4;
  cfg.stage2_steps = 3;
  cfg.d_window = 32;
  cfg.seed = 5;
  cfg.generator = GeneratorConfig::tiny(1);
  return cfg;
}

class SmallCorpus : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir("trainer_corpus");
    manifest_ = new DatasetManifest(generate_synthetic_corpus(3, 2, 4, {}, dir_->path()));
  }
  static void TearDownTestSuite() {
    delete manifest_;
    delete dir_;
  }
  static const DatasetManifest& manifest() { return *manifest_; }

 private:
  static TempDir* dir_;
  static DatasetManifest* manifest_;
};

TempDir* SmallCorpus::dir_ = nullptr;
DatasetManifest* SmallCorpus::manifest_ = nullptr;

TEST(LearningRate, HalvesOnSchedule) {
  TrainConfig cfg;
  EXPECT_EQ(learning_rate(cfg, 0), 1e-4);
  EXPECT_EQ(learning_rate(cfg, 499), 1e-4);
  EXPECT_EQ(learning_rate(cfg, 500), 5e-5);
  EXPECT_EQ(learning_rate(cfg, 1000), 2.5e-5);
  cfg.lr_halve_every = 50000;
  EXPECT_EQ(learning_rate(cfg, 49999), 1e-4);
  EXPECT_EQ(learning_rate(cfg, 50000), 5e-5);
}

TEST(TrainConfigInvariants, Rejected) {
  TrainConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.lr = 0.0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.stage2_steps = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.fixed_fm = -1.0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(AdamStep, FirstStepMovesByLearningRate) {
  ad::Var w = ad::parameter(Matrix::Zero(1, 1));
  Adam opt({{"w", w}}, 0.5, 0.9, 1e-8);
  w.node()->accumulate(Matrix::Ones(1, 1));
  opt.step(1e-4);
  // m̂ = v̂ = 1 after bias correction, so the step is lr / (1 + eps).
  EXPECT_EQ(w.value()(0, 0), f32(-1e-4 / (1.0 + 1e-8)));
  EXPECT_NEAR(w.value()(0, 0), -1e-4, 1e-4 * 1e-7);
  EXPECT_EQ(opt.steps_taken(), 1);
}

TEST(AdamStep, ZeroGradientLeavesFreshParametersAndDecaysMoments) {
  ad::Var w = ad::parameter(Matrix::Constant(2, 2, 0.75));
  Adam opt({{"w", w}}, 0.5, 0.9, 1e-8);
  opt.step(1e-3);
  EXPECT_TRUE(w.value().isApprox(Matrix::Constant(2, 2, 0.75)));
  EXPECT_EQ(w.value()(0, 0), 0.75);

  opt.first_moments()[0].setConstant(0.5);
  opt.second_moments()[0].setConstant(0.25);
  opt.step(1e-3);
  EXPECT_EQ(opt.first_moments()[0](1, 1), 0.25);
  EXPECT_EQ(opt.second_moments()[0](1, 1), f32(0.225));
}

TEST(AdamStep, MatchesTextbookRecurrence) {
  Rng rng(1);
  const double b1 = 0.5, b2 = 0.9, eps = 1e-8, lr = 1e-3;
  Matrix init = testing::random_matrix(3, 4, rng);
  init = init.cast<float>().cast<double>();
  ad::Var w = ad::parameter(init);
  Adam opt({{"w", w}}, b1, b2, eps);
  Matrix x = init, m = Matrix::Zero(3, 4), v = Matrix::Zero(3, 4);
  for (int t = 1; t <= 25; ++t) {
    const Matrix g = testing::random_matrix(3, 4, rng);
    opt.zero_grad();
    w.node()->accumulate(g);
    opt.step(lr);
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      double& mi = m.data()[i];
      double& vi = v.data()[i];
      mi = f32(b1 * mi + (1 - b1) * g.data()[i]);
      vi = f32(b2 * vi + (1 - b2) * g.data()[i] * g.data()[i]);
      const double mhat = mi / (1 - std::pow(b1, t));
      const double vhat = vi / (1 - std::pow(b2, t));
      x.data()[i] = f32(x.data()[i] - lr * mhat / (std::sqrt(vhat) + eps));
    }
  }
  EXPECT_LT((w.value() - x).cwiseAbs().maxCoeff(), 1e-7);
}

TEST(AdamStep, IdenticalInputsGiveIdenticalUpdates) {
  Rng rng(2);
  const Matrix init = testing::random_matrix(5, 3, rng).cast<float>().cast<double>();
  ad::Var a = ad::parameter(init), b = ad::parameter(init);
  Adam oa({{"a", a}}, 0.5, 0.9, 1e-8), ob({{"b", b}}, 0.5, 0.9, 1e-8);
  for (int t = 0; t < 5; ++t) {
    const Matrix g = testing::random_matrix(5, 3, rng);
    oa.zero_grad();
    ob.zero_grad();
    a.node()->accumulate(g);
    b.node()->accumulate(g);
    oa.step(1e-3);
    ob.step(1e-3);
  }
  EXPECT_TRUE(bit_equal(a.value(), b.value()));
}

TEST(AdamStep, NonFiniteGradientAbortsBeforeUpdate) {
  ad::Var a = ad::parameter(Matrix::Constant(1, 2, 1.0));
  ad::Var b = ad::parameter(Matrix::Constant(1, 2, 2.0));
  Adam opt({{"a", a}, {"b", b}}, 0.5, 0.9, 1e-8);
  a.node()->accumulate(Matrix::Ones(1, 2));
  Matrix bad = Matrix::Ones(1, 2);
  bad(0, 1) = std::nan("");
  b.node()->accumulate(bad);
  try {
    opt.step(1e-3);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("b"), std::string::npos);
  }
  EXPECT_EQ(a.value()(0, 0), 1.0);
  EXPECT_EQ(opt.steps_taken(), 0);
}

TEST(BatchSchedule, EpochsArePermutationsFixedBySeed) {
  BatchSchedule a(10, 3, 7), b(10, 3, 7), c(10, 3, 8);
  bool differs = false;
  std::vector<size_t> first_epoch;
  for (int epoch = 0; epoch < 4; ++epoch) {
    std::multiset<size_t> seen;
    std::vector<size_t> order;
    for (int k = 0; k < 4; ++k) {
      const auto x = a.next();
      EXPECT_EQ(x, b.next());
      differs = differs || x != c.next();
      EXPECT_EQ(x.size(), k < 3 ? 3u : 1u);
      seen.insert(x.begin(), x.end());
      order.insert(order.end(), x.begin(), x.end());
    }
    EXPECT_EQ(seen, (std::multiset<size_t>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9}));
    if (epoch == 0) first_epoch = order;
    if (epoch == 1) {
      EXPECT_NE(order, first_epoch);
    }
  }
  EXPECT_TRUE(differs);
}

TEST_F(SmallCorpus, StageOneIsDeterministic) {
  TempDir out1("s1a"), out2("s1b");
  TrainConfig cfg = small_config();
  cfg.ckpt_dir = out1.path();
  const TrainResult a = train_stage1(manifest(), cfg);
  cfg.ckpt_dir = out2.path();
  const TrainResult b = train_stage1(manifest(), cfg);
  ASSERT_EQ(a.history.size(), 4u);
  for (size_t i = 0; i < a.history.size(); ++i) {
    EXPECT_EQ(a.history[i].l_recon, b.history[i].l_recon);
  }
  EXPECT_EQ(slurp(out1 / "stage1.gsck"), slurp(out2 / "stage1.gsck"));
  EXPECT_FALSE(slurp(out1 / "stage1.gsck").empty());
}

TEST_F(SmallCorpus, StageOneReportsAndLogs) {
  TempDir out("s1log");
  TrainConfig cfg = small_config();
  cfg.log_path = out / "train.jsonl";
  cfg.lr_halve_every = 2;
  const TrainResult r = train_stage1(manifest(), cfg);
  for (size_t i = 0; i < r.history.size(); ++i) {
    const LossReport& l = r.history[i];
    EXPECT_EQ(l.step, static_cast<long>(i) + 1);
    EXPECT_EQ(l.stage, 1);
    const double sum = l.l_mel + l.l_dur + l.l_pitch + l.l_energy;
    EXPECT_NEAR(l.l_recon, sum, 1e-9 * sum);
    EXPECT_EQ(l.l_d, 0.0);
    EXPECT_EQ(l.lr, i < 2 ? 1e-4 : 5e-5);
  }
  std::ifstream in(cfg.log_path);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("step").get<long>(), n + 1);
    EXPECT_EQ(j.at("l_recon").get<double>(), r.history[n].l_recon);
    for (const char* key : {"l_mel", "l_dur", "l_pitch", "l_energy", "l_d", "l_g_adv",
                            "l_fm", "lambda_fm", "l_g_total", "lr"}) {
      EXPECT_TRUE(j.contains(key)) << key;
    }
    ++n;
  }
  EXPECT_EQ(n, 4);
}

TEST_F(SmallCorpus, StageOneNeverBuildsADiscriminator) {
  TrainingSession s(small_config(), load_all(manifest()), 2);
  s.stage1_step();
  EXPECT_EQ(s.discriminator(), nullptr);
  EXPECT_EQ(s.discriminator_optimizer(), nullptr);
  const Checkpoint c = s.checkpoint();
  EXPECT_FALSE(c.has_discriminator());
  EXPECT_EQ(c.stage, 1);
  EXPECT_EQ(c.step, 1u);
  for (const auto& t : c.tensors) EXPECT_FALSE(t.name.starts_with("disc."));
  EXPECT_THROW(s.stage2_step(), std::logic_error);
}

TEST_F(SmallCorpus, NonFiniteLossAbortsWithDiagnostic) {
  TrainingSession s(small_config(), load_all(manifest()), 2);
  for (const auto& p : s.generator().parameters()) {
    if (p.name.starts_with("gen.mel_out")) {
      ad::Var v = p.var;
      v.mutable_value()(0, 0) = std::nan("");
    }
  }
  try {
    s.stage1_step();
    FAIL();
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("step 1"), std::string::npos) << msg;
    EXPECT_NE(msg.find("l_mel"), std::string::npos) << msg;
  }
}

TEST_F(SmallCorpus, CheckpointRoundTripIsBitExact) {
  TempDir out("rt");
  TrainConfig cfg = small_config();
  const TrainResult r = train_stage1(manifest(), cfg);
  save_checkpoint(r.checkpoint, out / "a.gsck");
  const Checkpoint back = load_checkpoint(out / "a.gsck");
  ASSERT_EQ(back.tensors.size(), r.checkpoint.tensors.size());
  ASSERT_EQ(back.optimizer.size(), r.checkpoint.optimizer.size());
  for (size_t i = 0; i < back.tensors.size(); ++i) {
    EXPECT_EQ(back.tensors[i].name, r.checkpoint.tensors[i].name);
    EXPECT_EQ(back.tensors[i].dims, r.checkpoint.tensors[i].dims);
    EXPECT_EQ(0, std::memcmp(back.tensors[i].data.data(), r.checkpoint.tensors[i].data.data(),
                             back.tensors[i].data.size() * sizeof(float)));
  }
  EXPECT_EQ(back.step, r.checkpoint.step);
  EXPECT_EQ(back.stage, r.checkpoint.stage);
  save_checkpoint(back, out / "b.gsck");
  EXPECT_EQ(slurp(out / "a.gsck"), slurp(out / "b.gsck"));

  // Restored generator reproduces the trained one.
  TrainingSession s(cfg, load_all(manifest()), 2);
  for (int i = 0; i < 4; ++i) s.stage1_step();
  const auto g = restore_generator(back);
  const std::vector<int> ph = {3, 9, 27, 14};
  EXPECT_TRUE(s.generator().forward_infer(ph, 1).data == g->forward_infer(ph, 1).data);
  const Utterance u = load_utterance(manifest(), manifest().entries[0]);
  EXPECT_TRUE(bit_equal(s.generator().forward_train(u).mel.value(),
                        g->forward_train(u).mel.value()));
}

TEST_F(SmallCorpus, CorruptCheckpointsReportOffset) {
  TempDir out("corrupt");
  const TrainResult r = train_stage1(manifest(), small_config());
  save_checkpoint(r.checkpoint, out / "c.gsck");
  const auto size = std::filesystem::file_size(out / "c.gsck");
  for (uintmax_t cut : {uintmax_t{2}, uintmax_t{9}, size / 2, size - 1}) {
    std::filesystem::copy_file(out / "c.gsck", out / "t.gsck",
                               std::filesystem::copy_options::overwrite_existing);
    std::filesystem::resize_file(out / "t.gsck", cut);
    try {
      load_checkpoint(out / "t.gsck");
      FAIL() << "cut at " << cut;
    } catch (const DataError& e) {
      const std::string msg = e.what();
      EXPECT_NE(msg.find("corrupt checkpoint"), std::string::npos) << msg;
      EXPECT_NE(msg.find("offset"), std::string::npos) << msg;
    }
  }
  auto bytes = slurp(out / "c.gsck");
  bytes[0] = 'X';
  std::ofstream(out / "m.gsck", std::ios::binary).write(bytes.data(), bytes.size());
  EXPECT_THROW(load_checkpoint(out / "m.gsck"), DataError);
}

TEST_F(SmallCorpus, StageTwoFromStageOneBuildsFreshDiscriminator) {
  TrainConfig cfg = small_config();
  const TrainResult s1 = train_stage1(manifest(), cfg);
  TrainingSession s(cfg, load_all(manifest()), s1.checkpoint);
  ASSERT_NE(s.discriminator(), nullptr);
  EXPECT_EQ(s.stage(), 2);
  EXPECT_EQ(s.generator_optimizer().steps_taken(), 0);
  const Discriminator fresh(s.discriminator()->config(), Rng::derive(cfg.seed, 2));
  const auto a = s.discriminator()->parameters(), b = fresh.parameters();
  ASSERT_EQ(a.size(), b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    EXPECT_TRUE(bit_equal(a[i].var.value(), b[i].var.value())) << a[i].name;
  }
  const LossReport r = s.stage2_step();
  EXPECT_EQ(r.step, 5);
  EXPECT_EQ(r.stage, 2);
  EXPECT_THROW(s.stage1_step(), std::logic_error);
}

TEST_F(SmallCorpus, StageTwoCheckpointRestoresBothNetworks) {
  TrainConfig cfg = small_config();
  const TrainResult s1 = train_stage1(manifest(), cfg);
  const TrainResult s2 = train_stage2(s1.checkpoint, manifest(), cfg);
  EXPECT_TRUE(s2.checkpoint.has_discriminator());
  EXPECT_EQ(s2.checkpoint.stage, 2);
  EXPECT_EQ(s2.checkpoint.step, 7u);
  TrainingSession s(cfg, load_all(manifest()), s2.checkpoint);
  const Checkpoint again = s.checkpoint();
  ASSERT_EQ(again.tensors.size(), s2.checkpoint.tensors.size());
  for (size_t i = 0; i < again.tensors.size(); ++i) {
    EXPECT_EQ(again.tensors[i].name, s2.checkpoint.tensors[i].name);
    EXPECT_EQ(again.tensors[i].data, s2.checkpoint.tensors[i].data)
        << again.tensors[i].name;
  }
  ASSERT_EQ(again.optimizer.size(), s2.checkpoint.optimizer.size());
  for (size_t i = 0; i < again.optimizer.size(); ++i) {
    EXPECT_EQ(again.optimizer[i].data, s2.checkpoint.optimizer[i].data);
  }
  EXPECT_EQ(s.generator_optimizer().steps_taken(), 3);
}

TEST_F(SmallCorpus, StageTwoIsDeterministicAndBalanced) {
  TrainConfig cfg = small_config();
  const TrainResult s1 = train_stage1(manifest(), cfg);
  const TrainResult a = train_stage2(s1.checkpoint, manifest(), cfg);
  const TrainResult b = train_stage2(s1.checkpoint, manifest(), cfg);
  ASSERT_EQ(a.history.size(), 3u);
  for (size_t i = 0; i < a.history.size(); ++i) {
    const LossReport& r = a.history[i];
    EXPECT_EQ(r.l_g_total, b.history[i].l_g_total);
    EXPECT_EQ(r.l_d, b.history[i].l_d);
    const double sum = r.l_mel + r.l_dur + r.l_pitch + r.l_energy;
    EXPECT_NEAR(r.l_recon, sum, 1e-9 * sum);
    ASSERT_FALSE(r.lambda_clamped);
    EXPECT_NEAR(r.lambda_fm * r.l_fm, r.l_recon, 1e-9 * r.l_recon);
    const double total = r.l_g_adv + r.lambda_fm * r.l_fm + r.l_recon;
    EXPECT_NEAR(r.l_g_total, total, 1e-9 * total);
    EXPECT_GT(r.l_d, 0.0);
  }
}

TEST_F(SmallCorpus, FixedFeatureMatchingWeight) {
  TrainConfig cfg = small_config();
  const TrainResult s1 = train_stage1(manifest(), cfg);
  cfg.fixed_fm = 10.0;
  const TrainResult r = train_stage2(s1.checkpoint, manifest(), cfg);
  for (const auto& l : r.history) {
    EXPECT_EQ(l.lambda_fm, 10.0);
    EXPECT_NEAR(l.l_g_total, l.l_g_adv + 10.0 * l.l_fm + l.l_recon, 1e-9 * l.l_g_total);
  }
}

std::vector<Matrix> snapshot(const nn::ParamList& params) {
  std::vector<Matrix> out;
  for (const auto& p : params) out.push_back(p.var.value());
  return out;
}

bool unchanged(const nn::ParamList& params, const std::vector<Matrix>& before) {
  for (size_t i = 0; i < params.size(); ++i) {
    if (!bit_equal(params[i].var.value(), before[i])) return false;
  }
  return true;
}

int count_with_grad(const nn::ParamList& params) {
  int n = 0;
  for (const auto& p : params) {
    if (p.var.grad().cwiseAbs().maxCoeff() > 0.0) ++n;
  }
  return n;
}

TEST_F(SmallCorpus, UpdatesArePartitionedAndGradientsFlowCorrectly) {
  TrainConfig cfg = small_config();
  const TrainResult s1 = train_stage1(manifest(), cfg);
  TrainingSession s(cfg, load_all(manifest()), s1.checkpoint);
  const nn::ParamList gen = s.generator().parameters();
  const nn::ParamList disc = s.discriminator()->parameters();

  const std::vector<size_t> batch = s.next_batch();
  AdversarialBatch b = s.generator_forward(batch);
  s.accumulate_discriminator_grads(b);
  EXPECT_EQ(count_with_grad(gen), 0);
  EXPECT_EQ(count_with_grad(disc), static_cast<int>(disc.size()));
  const auto gen_before = snapshot(gen);
  const auto disc_initial = snapshot(disc);
  s.discriminator_optimizer()->step(1e-4);
  EXPECT_TRUE(unchanged(gen, gen_before));
  EXPECT_FALSE(unchanged(disc, disc_initial));

  const LossReport r = s.accumulate_generator_grads(b);
  EXPECT_EQ(count_with_grad(disc), 0);
  EXPECT_GT(count_with_grad(gen), static_cast<int>(gen.size()) / 2);
  for (const auto& p : disc) EXPECT_TRUE(p.var.requires_grad()) << p.name;
  const auto disc_before = snapshot(disc);
  s.generator_optimizer().step(1e-4);
  EXPECT_TRUE(unchanged(disc, disc_before));
  EXPECT_FALSE(unchanged(gen, gen_before));
  EXPECT_GT(r.l_fm, 0.0);
}

TEST_F(SmallCorpus, FeatureMatchingGradientReachesGeneratorOnly) {
  TrainConfig cfg = small_config();
  const TrainResult s1 = train_stage1(manifest(), cfg);
  TrainingSession s(cfg, load_all(manifest()), s1.checkpoint);
  const Utterance u = load_utterance(manifest(), manifest().entries[1]);
  Discriminator& d = *s.discriminator();
  for (const auto& p : d.parameters()) p.var.set_requires_grad(false);
  const GeneratorOutput out = s.generator().forward_train(u);
  const ad::Var spk = ad::detach(s.generator().speaker_embedding(u.speaker));
  Rng rng(1);
  const CropResult c = crop_pair(ad::constant(u.mel.data.cast<double>()), out.mel, 32, rng);
  const JcuOutput real = d.discriminate(c.real, spk);
  const JcuOutput fake = d.discriminate(c.fake, spk);
  std::vector<ad::Var> real_feats;
  for (const auto& f : real.features) real_feats.push_back(ad::detach(f));
  ad::backward(feature_matching(real_feats, fake.features));
  for (const auto& p : d.parameters()) {
    EXPECT_FALSE(p.var.has_grad()) << p.name;
    p.var.set_requires_grad(true);
  }
  int reached = 0;
  for (const auto& p : s.generator().parameters()) {
    if (p.var.grad().cwiseAbs().maxCoeff() > 0.0) ++reached;
  }
  EXPECT_GT(reached, 10);
}

}  // namespace
}  // namespace advtts
