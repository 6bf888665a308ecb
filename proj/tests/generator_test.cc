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

#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "advtts/losses.h"
#include "gradcheck.h"
#include "test_util.h"

namespace advtts {
namespace {

using ad::Matrix;
using testing::random_matrix;

// In-memory utterance over a small vocabulary with random targets.
Utterance random_utterance(Rng& rng, int vocab, int n_speakers, int n_phonemes,
                           int max_dur = 3) {
  Utterance u;
  u.id = "r";
  u.speaker = rng.uniform_int(0, n_speakers - 1);
  int frames = 0;
  for (int i = 0; i < n_phonemes; ++i) {
    u.phonemes.push_back(rng.uniform_int(0, vocab - 1));
    u.durations.push_back(rng.uniform_int(1, max_dur));
    frames += u.durations.back();
  }
  u.mel.data = (random_matrix(frames, 80, rng) - Matrix::Constant(frames, 80, 4.0))
                   .cast<float>();
  for (int t = 0; t < frames; ++t) {
    u.pitch.push_back(rng.uniform() < 0.2 ? 0.0f
                                          : static_cast<float>(rng.uniform(90, 300)));
    u.energy.push_back(static_cast<float>(rng.uniform(0.1, 3.0)));
  }
  return u;
}

struct TinyFixture {
  explicit TinyFixture(uint64_t seed, int n_speakers = 2) : rng(seed) {
    for (int i = 0; i < 3; ++i) {
      corpus.push_back(random_utterance(rng, 8, n_speakers, 4 + i));
    }
    gen = std::make_unique<Generator>(GeneratorConfig::tiny(n_speakers),
                                      VarianceStats::from_corpus(corpus), seed);
  }
  Rng rng;
  std::vector<Utterance> corpus;
  std::unique_ptr<Generator> gen;
};

TEST(GeneratorConfig, Invariants) {
  GeneratorConfig c;
  EXPECT_NO_THROW(c.validate());
  c.n_heads = 3;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.reduction_factor = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.speaker_dim = 256;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(GeneratorConfig, PaperDepthIsConstructible) {
  GeneratorConfig c;
  c.n_blocks_enc = c.n_blocks_dec = 6;
  c.n_speakers = 3;
  Generator g(c, VarianceStats{}, 1);
  const std::vector<int> ph = {1, 2, 3};
  EXPECT_EQ(g.encode(ph, 2).rows(), 3);
}

TEST(Encode, LengthPreserving) {
  TinyFixture f(1);
  const std::vector<int> ph = {0, 1, 2, 3, 4, 5, 6};
  const ad::Var h = f.gen->encode(ph, 0);
  EXPECT_EQ(h.rows(), 7);
  EXPECT_EQ(h.cols(), 32);
}

TEST(Encode, SpeakerShiftIsPositionConstant) {
  TinyFixture f(2, 3);
  Rng rng(9);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<int> ph(rng.uniform_int(1, 12));
    for (int& p : ph) p = rng.uniform_int(0, 7);
    const Matrix diff =
        f.gen->encode(ph, 0).value() - f.gen->encode(ph, 2).value();
    EXPECT_GT(diff.row(0).norm(), 1e-6);
    for (Eigen::Index r = 1; r < diff.rows(); ++r) {
      EXPECT_LT((diff.row(r) - diff.row(0)).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(Encode, DeterministicAndRangeChecked) {
  TinyFixture f(3);
  const std::vector<int> ph = {3, 1, 4, 1, 5};
  EXPECT_TRUE(testing::bit_equal(f.gen->encode(ph, 1).value(),
                                 f.gen->encode(ph, 1).value()));
  const std::vector<int> bad = {3, 8};
  EXPECT_THROW(f.gen->encode(bad, 0), std::out_of_range);
  EXPECT_THROW(f.gen->encode(ph, 2), std::out_of_range);
  EXPECT_THROW(f.gen->encode(ph, -1), std::out_of_range);
}

TEST(LengthRegulate, Examples) {
  Matrix h(3, 2);
  h << 1, 2, 3, 4, 5, 6;
  const std::vector<int> d = {1, 2, 0};
  Matrix want(3, 2);
  want << 1, 2, 3, 4, 3, 4;
  EXPECT_EQ(ad::Matrix(length_regulate(ad::constant(h), d).value()), want);
  const std::vector<int> ones = {1, 1, 1};
  EXPECT_EQ(ad::Matrix(length_regulate(ad::constant(h), ones).value()), h);
  const std::vector<int> zeros = {0, 0, 0};
  try {
    length_regulate(ad::constant(h), zeros);
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("empty expansion"), std::string::npos);
  }
  const std::vector<int> short_d = {1, 1};
  EXPECT_THROW(length_regulate(ad::constant(h), short_d), std::invalid_argument);
}

TEST(LengthRegulate, RandomInputsRepeatInOrder) {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = rng.uniform_int(1, 10);
    const Matrix h = random_matrix(n, 3, rng);
    std::vector<int> d(n);
    for (int& x : d) x = rng.uniform_int(0, 4);
    d[rng.uniform_int(0, n - 1)] += 1;
    const Matrix out = length_regulate(ad::constant(h), d).value();
    ASSERT_EQ(out.rows(), std::accumulate(d.begin(), d.end(), 0));
    Eigen::Index r = 0;
    for (int i = 0; i < n; ++i) {
      for (int k = 0; k < d[i]; ++k, ++r) ASSERT_EQ(Matrix(out.row(r)), Matrix(h.row(i)));
    }
  }
}

TEST(PredictVariances, Shapes) {
  TinyFixture f(5);
  const std::vector<int> ph = {1, 2, 3, 4, 5};
  const ad::Var h = f.gen->encode(ph, 0);
  const std::vector<int> d = {2, 3, 1, 4, 2};
  const ad::Var e = length_regulate(h, d);
  const VariancePrediction v = f.gen->predict_variances(h, e, nullptr);
  EXPECT_EQ(v.log_dur.rows(), 5);
  EXPECT_EQ(v.pitch.rows(), 12);
  EXPECT_EQ(v.energy.rows(), 12);
  const VariancePrediction again = f.gen->predict_variances(h, e, nullptr);
  EXPECT_TRUE(testing::bit_equal(v.pitch.value(), again.pitch.value()));
}

TEST(Decode, ReductionFactorArithmetic) {
  for (int r : {1, 2, 3}) {
    GeneratorConfig c = GeneratorConfig::tiny(1);
    c.reduction_factor = r;
    Generator g(c, VarianceStats{}, 6);
    Rng rng(6);
    for (int frames : {10, 11, 1}) {
      EXPECT_EQ(g.decoder_length(frames), (frames + r - 1) / r);
      const ad::Var out = g.decode(ad::constant(random_matrix(frames, 32, rng)));
      EXPECT_EQ(out.rows(), frames);
      EXPECT_EQ(out.cols(), 80);
    }
  }
  GeneratorConfig c = GeneratorConfig::tiny(1);
  EXPECT_EQ(Generator(c, VarianceStats{}, 1).decoder_length(10), 5);
}

TEST(Decode, PaddingDoesNotLeakIntoKeptFrames) {
  // With r = 2 an odd-length stream is zero padded; the kept frames equal
  // the decode of the explicitly zero-padded stream.
  Generator g(GeneratorConfig::tiny(1), VarianceStats{}, 7);
  Rng rng(7);
  const Matrix x = random_matrix(11, 32, rng);
  Matrix padded = Matrix::Zero(12, 32);
  padded.topRows(11) = x;
  const Matrix a = g.decode(ad::constant(x)).value();
  const Matrix b = g.decode(ad::constant(padded)).value();
  EXPECT_TRUE(testing::bit_equal(a, Matrix(b.topRows(11))));
}

TEST(ForwardTrain, TeacherForcedShapesAndDeterminism) {
  TinyFixture f(8);
  for (const auto& u : f.corpus) {
    const GeneratorOutput out = f.gen->forward_train(u);
    EXPECT_EQ(out.mel.rows(), u.mel.n_frames());
    EXPECT_EQ(out.mel.cols(), 80);
    EXPECT_EQ(out.log_dur.rows(), static_cast<Eigen::Index>(u.phonemes.size()));
    EXPECT_EQ(out.pitch.rows(), u.mel.n_frames());
    EXPECT_EQ(out.energy.rows(), u.mel.n_frames());
    EXPECT_TRUE(testing::bit_equal(out.mel.value(), f.gen->forward_train(u).mel.value()));
  }
}

TEST(ForwardTrain, DropoutOnlyWithRng) {
  TinyFixture f(9);
  const Utterance& u = f.corpus[2];
  Rng drop(1);
  const GeneratorOutput plain = f.gen->forward_train(u);
  const GeneratorOutput dropped = f.gen->forward_train(u, &drop);
  EXPECT_FALSE(testing::bit_equal(plain.pitch.value(), dropped.pitch.value()));
  // Teacher forcing feeds target pitch/energy to the decoder, so the mel
  // path is unaffected by predictor dropout.
  EXPECT_TRUE(testing::bit_equal(plain.mel.value(), dropped.mel.value()));
}

TEST(ForwardTrain, SyntheticCorpusShapes) {
  std::vector<Utterance> corpus;
  for (int i = 0; i < 6; ++i) corpus.push_back(synthesize_utterance(3, i, 2, {}, nullptr));
  GeneratorConfig c;
  c.n_speakers = 2;
  Generator g(c, VarianceStats::from_corpus(corpus), 3);
  for (const auto& u : corpus) {
    const GeneratorOutput out = g.forward_train(u);
    EXPECT_EQ(out.mel.rows(), std::accumulate(u.durations.begin(), u.durations.end(), 0));
    EXPECT_EQ(out.mel.cols(), 80);
  }
}

TEST(ForwardTrain, MelLossGradientsMatchFiniteDifferences) {
  TinyFixture f(10);
  const Utterance& u = f.corpus[1];
  const ReconTargets t = f.gen->targets(u);
  const auto res = testing::check_gradients(
      [&] {
        return recon_loss(f.gen->forward_train(u), t, LossWeights{}).mel;
      },
      f.gen->parameters());
  EXPECT_TRUE(res.ok()) << res.report;
  EXPECT_GT(res.checked, 100);
}

TEST(ForwardTrain, NoDeadParameters) {
  std::map<std::string, bool> reached;
  for (uint64_t seed : {21, 22, 23}) {
    TinyFixture f(seed);
    const auto params = f.gen->parameters();
    ad::Var total;
    for (const auto& u : f.corpus) {
      const ad::Var l =
          recon_loss(f.gen->forward_train(u), f.gen->targets(u), LossWeights{}).total;
      total = total.valid() ? ad::add(total, l) : l;
    }
    ad::backward(total);
    for (const auto& p : params) {
      reached[p.name] = reached[p.name] || p.var.grad().cwiseAbs().maxCoeff() > 0.0;
    }
  }
  for (const auto& [name, ok] : reached) EXPECT_TRUE(ok) << name;
  EXPECT_GT(reached.size(), 40u);
}

TEST(ForwardInfer, ForcedDurations) {
  TinyFixture f(11);
  nn::Linear& proj = f.gen->duration_predictor().projection();
  proj.weight.mutable_value().setZero();
  // Durations are predicted as log(d + 1): a constant ln 3 gives d = 2.
  proj.bias.mutable_value().setConstant(std::log(3.0));
  const std::vector<int> ph = {1, 2, 3, 4, 5};
  EXPECT_EQ(f.gen->predict_durations(ph, 0), std::vector<int>(5, 2));
  EXPECT_EQ(f.gen->forward_infer(ph, 0).n_frames(), 10);

  proj.bias.mutable_value().setConstant(-50.0);
  EXPECT_EQ(f.gen->predict_durations(ph, 1), std::vector<int>(5, 1));
  EXPECT_EQ(f.gen->forward_infer(ph, 1).n_frames(), 5);
}

TEST(ForwardInfer, Deterministic) {
  TinyFixture f(12);
  const std::vector<int> ph = {7, 0, 3};
  const MelSpectrogram a = f.gen->forward_infer(ph, 1);
  const MelSpectrogram b = f.gen->forward_infer(ph, 1);
  EXPECT_TRUE(a.data == b.data);
  EXPECT_EQ(a.n_bins(), 80);
}

TEST(Quantize, ClampsAndSpansBins) {
  Generator g(GeneratorConfig::tiny(1), VarianceStats{}, 1);
  EXPECT_EQ(g.quantize(-10.0, -1.0, 1.0), 0);
  EXPECT_EQ(g.quantize(10.0, -1.0, 1.0), 15);
  int prev = 0;
  for (double v = -1.0; v <= 1.0; v += 0.01) {
    const int b = g.quantize(v, -1.0, 1.0);
    EXPECT_GE(b, prev);
    prev = b;
  }
  EXPECT_EQ(prev, 15);
}

TEST(Parameters, NamesAreUnique) {
  TinyFixture f(13);
  std::set<std::string> names;
  for (const auto& p : f.gen->parameters()) {
    EXPECT_TRUE(names.insert(p.name).second) << p.name;
    EXPECT_TRUE(p.name.starts_with("gen."));
  }
  EXPECT_TRUE(names.count("gen.speaker_table"));
}

}  // namespace
}  // namespace advtts
