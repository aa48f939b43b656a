// Copyright 2026 The NDCC Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "ndcc/training.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <random>

#include "fixtures.hpp"
#include "ndcc/error.hpp"
#include "test_util.hpp"

namespace ndcc {
namespace {

using testing::synthetic_pair;
using testing::TempDir;
using testing::tiny_config;
using testing::train_loss;

std::vector<ImagePair> Pairs(std::uint64_t first, int n) {
  std::vector<ImagePair> out;
  for (int i = 0; i < n; ++i) out.push_back(synthetic_pair(first + i));
  return out;
}

TrainSchedule Short(int iters) {
  TrainSchedule s = TrainSchedule::desk();
  s.max_iters = iters;
  s.val_every = 0;
  return s;
}

TEST(LossTest, HandSetTermsCombine) {
  EXPECT_NEAR(combine_loss(2, 0.1, 1, 0.2, 3, 10, 1, 0.001), 6.003, 1e-12);
  EXPECT_EQ(combine_loss(2, 0.1, 1, 0.2, 3, 10, 0, 0), 2 + 10 * 0.1);
}

TEST(LossTest, BreakdownIsConsistent) {
  const Model m(ModelConfig::desk());
  const ImagePair p = synthetic_pair(1);
  const LossBreakdown l = train_loss(m, p, 3);
  EXPECT_EQ(l.total, combine_loss(l.rx, l.dx, l.ry, l.dy, l.rw, 16, 1, 1e-3));
  EXPECT_NEAR(l.loss.value().item(), l.total, 1e-12 * std::abs(l.total));
  EXPECT_DOUBLE_EQ(l.rx, l.rx_bits / (32.0 * 64.0));
  EXPECT_GE(l.rx, 0.0);
  EXPECT_GE(l.ry, 0.0);
  EXPECT_GE(l.rw, 0.0);
  EXPECT_GE(l.dx, 0.0);
  EXPECT_LE(l.dx, 1.0);
}

TEST(LossTest, SideRegularizersOff) {
  const Model m(ModelConfig::desk());
  const ImagePair p = synthetic_pair(2);
  NoiseSource noise(4);
  const LatentBundle b = forward(m, p, QuantMode::kTrain, &noise);
  const LossBreakdown l = compute_loss(b, p, m, 16, 0, 0);
  EXPECT_EQ(l.total, l.rx + 16 * l.dx);
  EXPECT_NEAR(l.loss.value().item(), l.total, 1e-12 * l.total);
}

TEST(LossTest, PerfectReconstructionHasNoDistortion) {
  const Model m(ModelConfig::desk());
  const ImagePair p = synthetic_pair(3);
  NoiseSource noise(5);
  LatentBundle b = forward(m, p, QuantMode::kTrain, &noise);
  b.x_hat = ad::constant(p.x);
  b.y_hat = ad::constant(p.y);
  const LossBreakdown l = compute_loss(b, p, m);
  EXPECT_EQ(l.dx, 0.0);
  EXPECT_EQ(l.dy, 0.0);
  EXPECT_EQ(l.total, l.rx + 1.0 * l.ry + 1e-3 * l.rw);
}

void ExpectDivergedNaming(const std::function<void()>& f, const std::string& term) {
  try {
    f();
    ADD_FAILURE() << "expected divergence";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDiverged);
    EXPECT_NE(std::string(e.what()).find(term), std::string::npos) << e.what();
  }
}

TEST(LossTest, NonFiniteTermsAreNamed) {
  const Model m(ModelConfig::desk());
  const ImagePair p = synthetic_pair(4);
  NoiseSource noise(6);
  const LatentBundle base = forward(m, p, QuantMode::kTrain, &noise);
  const double nan = std::numeric_limits<double>::quiet_NaN();

  LatentBundle b = base;
  Tensor bad = p.x;
  bad[17] = nan;
  b.x_hat = ad::constant(bad);
  ExpectDivergedNaming([&] { compute_loss(b, p, m); }, "D_x");

  b = base;
  b.y_hat = ad::constant(bad);
  ExpectDivergedNaming([&] { compute_loss(b, p, m); }, "D_y");

  b = base;
  Tensor v = base.v_x_hat.value();
  v[0] = nan;
  b.v_x_hat = ad::constant(v);
  ExpectDivergedNaming([&] { compute_loss(b, p, m); }, "R_x");

  b = base;
  Tensor w = base.w.value();
  w[3] = nan;
  b.w = ad::constant(w);
  ExpectDivergedNaming([&] { compute_loss(b, p, m); }, "R_w");

  b = base;
  Tensor vy = base.v_y.value();
  vy[3] = std::numeric_limits<double>::infinity();
  b.v_y = ad::constant(vy);
  ExpectDivergedNaming([&] { compute_loss(b, p, m); }, "R_y");
}

TEST(LossTest, GradientOfTotalLossMatchesFiniteDifferences) {
  const Model m(tiny_config());
  EXPECT_LT(testing::loss_gradient_error(m, synthetic_pair(5, 32, 32), 9), 1e-3);
}

// Reference update written out per coordinate for a scalar parameter.
struct ScalarAmsGrad {
  double lr, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  double m = 0, v = 0, vmax = 0;
  int t = 0;
  double step(double w, double g) {
    ++t;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    vmax = std::max(vmax, v);
    const double m_hat = m / (1 - std::pow(b1, t));
    const double v_hat = vmax / (1 - std::pow(b2, t));
    return w - lr * m_hat / (std::sqrt(v_hat) + eps);
  }
};

TEST(AmsGradTest, MatchesReferenceOnAQuadratic) {
  const ad::Var w = ad::parameter(Tensor({2}, std::vector<double>{3.0, -1.0}));
  AmsGrad opt({{"w", w}}, 0.05);
  ScalarAmsGrad ref0{0.05}, ref1{0.05};
  double r0 = 3.0, r1 = -1.0;
  for (int t = 0; t < 200; ++t) {
    opt.zero_grad();
    // f = 2 w0^2 + 0.5 w1^4 on odd steps, 0.1 w0^2 on even ones.
    const bool odd = t % 2;
    const ad::Var sq = ad::square(w);
    const Tensor c = odd ? Tensor({2}, std::vector<double>{2.0, 0.0})
                         : Tensor({2}, std::vector<double>{0.1, 0.0});
    const Tensor q = odd ? Tensor({2}, std::vector<double>{0.0, 0.5}) : Tensor({2}, 0.0);
    ad::backward(ad::sum(ad::add(ad::mul(sq, ad::constant(c)),
                                 ad::mul(ad::square(sq), ad::constant(q)))));
    const double g0 = odd ? 4 * r0 : 0.2 * r0;
    const double g1 = odd ? 2 * r1 * r1 * r1 : 0.0;
    opt.step();
    r0 = ref0.step(r0, g0);
    r1 = ref1.step(r1, g1);
    ASSERT_NEAR(w.value()[0], r0, 1e-12 * (1 + std::abs(r0))) << t;
    ASSERT_NEAR(w.value()[1], r1, 1e-12 * (1 + std::abs(r1))) << t;
  }
  EXPECT_EQ(opt.steps(), 200);
}

TEST(AmsGradTest, SecondMomentMaximumNeverShrinksStep) {
  // After a large gradient, small gradients take small steps.
  const ad::Var w = ad::parameter(Tensor({1}, 0.0));
  AmsGrad opt({{"w", w}}, 0.1);
  w.accumulate(Tensor({1}, 100.0));
  opt.step();
  for (int t = 0; t < 50; ++t) {
    opt.zero_grad();
    w.accumulate(Tensor({1}, 1e-3));
    const double before = w.value()[0];
    opt.step();
    EXPECT_LT(std::abs(w.value()[0] - before), 0.1);
  }
}

TEST(AmsGradTest, SkipsParametersWithoutGradient) {
  const ad::Var a = ad::parameter(Tensor({1}, 1.0));
  const ad::Var b = ad::parameter(Tensor({1}, 1.0));
  AmsGrad opt({{"a", a}, {"b", b}}, 0.1);
  a.accumulate(Tensor({1}, 1.0));
  opt.step();
  EXPECT_NE(a.value()[0], 1.0);
  EXPECT_EQ(b.value()[0], 1.0);
}

TEST(PlateauTest, DecaysAfterPatienceAndStopsAtFloor) {
  PlateauDecay p(1e-4, 5, 10, 1e-7, 1e-4);
  EXPECT_EQ(p.observe(1.0), 1e-4);
  for (int i = 0; i < 4; ++i) EXPECT_EQ(p.observe(1.0), 1e-4);
  EXPECT_NEAR(p.observe(1.0), 1e-5, 1e-20);
  EXPECT_NEAR(p.observe(0.5), 1e-5, 1e-20);
  for (int i = 0; i < 100; ++i) p.observe(0.5);
  EXPECT_EQ(p.learning_rate(), 1e-7);
}

TEST(PlateauTest, RandomLossesGiveNonIncreasingBoundedRates) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> d(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    PlateauDecay p(1e-3, 1 + trial % 5, 2 + trial, 1e-6, 1e-4);
    double prev = 1e-3;
    for (int i = 0; i < 200; ++i) {
      const double lr = p.observe(d(rng) + 10.0 / (i + 1));
      ASSERT_LE(lr, prev);
      ASSERT_GE(lr, 1e-6);
      prev = lr;
    }
  }
}

TEST(ScheduleTest, PresetsAndValidation) {
  const TrainSchedule full = TrainSchedule::full();
  EXPECT_EQ(full.learning_rate, 1e-4);
  EXPECT_EQ(full.decay_factor, 10.0);
  EXPECT_EQ(full.lr_floor, 1e-7);
  EXPECT_EQ(full.batch_size, 1);
  EXPECT_EQ(full.max_iters, 500000);
  EXPECT_EQ(TrainSchedule::desk().max_iters, 2000);
  EXPECT_EQ(TrainSchedule::desk().val_every, 500);
  TrainSchedule s = full;
  s.lr_floor = 1e-3;
  EXPECT_THROW(s.validate(), Error);
  s = full;
  s.decay_factor = 1.0;
  EXPECT_THROW(s.validate(), Error);
  const TrainSchedule j = TrainSchedule::from_json({{"max_iters", 7}}, full);
  EXPECT_EQ(j.max_iters, 7);
  EXPECT_EQ(j.patience, 5);
  EXPECT_EQ(TrainSchedule::from_json(full.to_json(), TrainSchedule::desk()).to_json(),
            full.to_json());
}

TEST(TrainTest, ZeroIterationsReturnsInitialModel) {
  TempDir dir("train0");
  const ModelConfig cfg = ModelConfig::desk();
  const TrainResult r = train(cfg, {}, {}, Short(0), {dir.path()});
  EXPECT_EQ(r.model.hash(), Model(cfg).hash());
  EXPECT_TRUE(r.log.empty());
  EXPECT_EQ(load_checkpoint(dir.path() / "model.ckpt").hash(), r.model.hash());
  EXPECT_THROW(train(cfg, {}, {}, Short(1)), Error);
}

TEST(TrainTest, IdenticalSeedsGiveIdenticalLogs) {
  const auto data = Pairs(10, 3);
  TrainSchedule s = Short(6);
  s.val_every = 3;
  const TrainResult a = train(ModelConfig::desk(), data, Pairs(20, 1), s);
  const TrainResult b = train(ModelConfig::desk(), data, Pairs(20, 1), s);
  ASSERT_EQ(a.log.size(), 6u);
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    EXPECT_EQ(a.log[i].loss, b.log[i].loss);
    EXPECT_EQ(a.log[i].rx, b.log[i].rx);
    EXPECT_EQ(a.log[i].val_ms_ssim, b.log[i].val_ms_ssim);
  }
  EXPECT_TRUE(a.log[2].val_ms_ssim.has_value());
  EXPECT_FALSE(a.log[1].val_bpp.has_value());
  EXPECT_EQ(a.model.hash(), b.model.hash());
  s.seed = 2;
  EXPECT_NE(train(ModelConfig::desk(), data, {}, s).model.hash(), a.model.hash());
}

TEST(TrainTest, LoggedRowsSatisfyTheLossIdentity) {
  const TrainResult r = train(ModelConfig::desk(), Pairs(30, 2), {}, Short(5));
  for (const MetricsRow& row : r.log) {
    EXPECT_EQ(row.loss, combine_loss(row.rx, row.dx, row.ry, row.dy, row.rw, 16, 1, 1e-3));
    EXPECT_EQ(row.lr, 1e-4);
  }
  for (const auto& [name, norm] : r.first_grad_norms) EXPECT_GT(norm, 0.0) << name;
}

TEST(TrainTest, WritesMetricsCsvAndCheckpoint) {
  TempDir dir("traincsv");
  const TrainResult r = train(ModelConfig::desk(), Pairs(40, 2), {}, Short(3), {dir.path()});
  std::ifstream in(dir.path() / "metrics.csv");
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "iter,lr,R_x,R_y,R_w,D_x,D_y,L,val_ms_ssim,val_bpp");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 3);
  EXPECT_EQ(load_checkpoint(dir.path() / "model.ckpt").hash(), r.model.hash());
}

TEST(TrainTest, DivergenceKeepsLastGoodParameters) {
  TempDir dir("diverge");
  const ModelConfig cfg = ModelConfig::desk();
  const Model start(cfg);
  ad::Var density = start.parameter("density.v_x");
  density.mutable_value()[5] = std::numeric_limits<double>::quiet_NaN();
  TrainOptions opts{dir.path()};
  opts.initial = &start;
  const TrainResult r = train(cfg, Pairs(50, 1), {}, Short(10), opts);
  EXPECT_TRUE(r.diverged);
  EXPECT_NE(r.message.find("R_x"), std::string::npos) << r.message;
  EXPECT_TRUE(r.log.empty());
  EXPECT_EQ(r.model.hash(), start.hash());
  EXPECT_TRUE(std::filesystem::exists(dir.path() / "last_good.ckpt"));
  EXPECT_FALSE(std::filesystem::exists(dir.path() / "model.ckpt"));
}

TEST(TrainTest, WarmStartRequiresMatchingConfig) {
  const Model other(tiny_config());
  TrainOptions opts;
  opts.initial = &other;
  EXPECT_THROW(train(ModelConfig::desk(), Pairs(60, 1), {}, Short(1), opts), Error);
}

TEST(TrainTest, ParameterGroups) {
  EXPECT_EQ(parameter_group("g_sx.2.weight"), "g_sx");
  EXPECT_EQ(parameter_group("cam.1.query"), "cam.1");
  EXPECT_EQ(parameter_group("density.v_x"), "density.v_x");
  EXPECT_EQ(parameter_group("f"), "f");
}

}  // namespace
}  // namespace ndcc
