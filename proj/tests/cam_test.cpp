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

#include "ndcc/cam.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "ndcc/error.hpp"
#include "test_util.hpp"

namespace ndcc {
namespace {

using testing::numeric_grad;
using testing::project;
using testing::random_tensor;
using testing::relative_error;

CamConfig SmallConfig(PatchDims patch = {2, 2, 2}, int d = 8, int heads = 2) {
  CamConfig c;
  c.patch = patch;
  c.embed_dim = d;
  c.attn_dim = d;
  c.heads = heads;
  return c;
}

TEST(TileTest, CountsAndLayout) {
  const PatchDims dims{2, 2, 2};
  EXPECT_EQ(dims.count({4, 4, 4}), 8);
  Tensor t({4, 4, 4});
  std::iota(t.storage().begin(), t.storage().end(), 0.0);
  const Tensor m = tile_patches(t, dims);
  ASSERT_EQ(m.shape(), (Shape{8, 8}));
  // Second patch is the next column block of channels 0-1.
  EXPECT_EQ(m.at(1, 0), t.at(0, 0, 2));
  EXPECT_EQ(m.at(2, 0), t.at(0, 2, 0));
  EXPECT_EQ(m.at(4, 0), t.at(2, 0, 0));
  EXPECT_EQ(m.at(0, 4), t.at(1, 0, 0));
  EXPECT_EQ(m.at(0, 3), t.at(0, 1, 1));
}

TEST(TileTest, SinglePatchIsAReshape) {
  std::mt19937_64 rng(1);
  const Tensor t = random_tensor({3, 2, 5}, rng);
  const Tensor m = tile_patches(t, {3, 2, 5});
  ASSERT_EQ(m.shape(), (Shape{1, 30}));
  EXPECT_EQ(m.storage(), t.storage());
  EXPECT_TRUE(untile_patches(m, t.shape(), {3, 2, 5}).identical(t));
}

TEST(TileTest, UntileInvertsTileBitwise) {
  std::mt19937_64 rng(2);
  for (const auto& [shape, dims] : std::vector<std::pair<Shape, PatchDims>>{
           {{4, 4, 4}, {2, 2, 2}}, {{12, 6, 10}, {3, 2, 5}}, {{8, 2, 4}, {1, 1, 1}}}) {
    const Tensor t = random_tensor(shape, rng);
    EXPECT_TRUE(untile_patches(tile_patches(t, dims), shape, dims).identical(t));
  }
}

TEST(TileTest, ZeroMatrixUntilesToZero) {
  const Tensor z = untile_patches(Tensor({8, 8}, 0.0), {4, 4, 4}, {2, 2, 2});
  for (double v : z.storage()) EXPECT_EQ(v, 0.0);
}

TEST(TileTest, ErrorsNameTheDivisors) {
  try {
    tile_patches(Tensor({4, 5, 4}), {2, 2, 2});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kShape);
    EXPECT_NE(std::string(e.what()).find("2x2x2"), std::string::npos);
  }
  EXPECT_THROW(untile_patches(Tensor({7, 8}), {4, 4, 4}, {2, 2, 2}), Error);
  EXPECT_THROW(untile_patches(Tensor({8, 8}), {4, 4, 3}, {2, 2, 2}), Error);
}

TEST(CamConfigTest, HeadsMustDivideAttentionDim) {
  CamConfig c = SmallConfig({2, 2, 2}, 8, 3);
  EXPECT_THROW(c.validate(), Error);
  std::mt19937_64 rng(3);
  EXPECT_THROW(CamParams::init(c, rng), Error);
}

TEST(AttentionTest, ZeroQueryGivesUniformWeightsAndColumnMean) {
  CamParams p;
  p.config = SmallConfig({1, 1, 1}, 2, 1);
  p.query = ad::parameter(Tensor({2, 2}, 0.0));
  p.key = ad::parameter(Tensor({2, 2}, std::vector<double>{1, 2, 3, 4}));
  p.value = ad::parameter(Tensor({2, 2}, std::vector<double>{1, 0, 0, 1}));
  const ad::Var px = ad::constant(Tensor({3, 2}, std::vector<double>{5, -1, 2, 2, 0, 7}));
  const ad::Var py = ad::constant(Tensor({3, 2}, std::vector<double>{1, 2, 3, 4, 5, 9}));
  const AttentionOutput out = cross_attention(px, py, p);
  ASSERT_EQ(out.weights.size(), 1u);
  for (double w : out.weights[0].storage()) EXPECT_NEAR(w, 1.0 / 3.0, 1e-15);
  // V_y = P_y, so every output row is the column mean (3, 5).
  for (int r = 0; r < 3; ++r) {
    EXPECT_NEAR(out.output.value().at(r, 0), 3.0, 1e-12);
    EXPECT_NEAR(out.output.value().at(r, 1), 5.0, 1e-12);
  }
}

TEST(AttentionTest, SinglePatchTakesItsValueRow) {
  std::mt19937_64 rng(4);
  const CamParams p = CamParams::init(SmallConfig({1, 1, 1}, 4, 2), rng);
  const ad::Var px = ad::constant(random_tensor({1, 4}, rng));
  const ad::Var py = ad::constant(random_tensor({1, 4}, rng));
  const AttentionOutput out = cross_attention(px, py, p);
  for (const Tensor& w : out.weights) EXPECT_EQ(w.item(), 1.0);
  const Tensor v = ad::matmul(py, p.value).value();
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(out.output.value()[i], v[i], 1e-15);
}

TEST(AttentionTest, HandComputedTwoPatchSingleHead) {
  CamParams p;
  p.config = SmallConfig({1, 1, 1}, 1, 1);
  p.query = ad::parameter(Tensor({1, 1}, 1.0));
  p.key = ad::parameter(Tensor({1, 1}, 1.0));
  p.value = ad::parameter(Tensor({1, 1}, 1.0));
  const ad::Var px = ad::constant(Tensor({2, 1}, std::vector<double>{1, 0}));
  const ad::Var py = ad::constant(Tensor({2, 1}, std::vector<double>{std::log(3.0), 5}));
  const AttentionOutput out = cross_attention(px, py, p);
  // Row 0 logits (ln 3, 5); row 1 logits (0, 0).
  const double e = std::exp(5.0);
  EXPECT_NEAR(out.weights[0].at(0, 0), 3.0 / (3.0 + e), 1e-14);
  EXPECT_NEAR(out.output.value()[0], (3.0 * std::log(3.0) + 5.0 * e) / (3.0 + e), 1e-12);
  EXPECT_NEAR(out.output.value()[1], (std::log(3.0) + 5.0) / 2.0, 1e-14);
}

TEST(AttentionTest, RowsAreDistributions) {
  std::mt19937_64 rng(5);
  const CamParams p = CamParams::init(SmallConfig({2, 2, 2}, 8, 2), rng);
  for (int trial = 0; trial < 50; ++trial) {
    const AttentionOutput out = cross_attention(ad::constant(random_tensor({6, 8}, rng, -5, 5)),
                                                ad::constant(random_tensor({6, 8}, rng, -5, 5)), p);
    ASSERT_EQ(out.weights.size(), 2u);
    for (const Tensor& w : out.weights)
      for (int r = 0; r < 6; ++r) {
        double s = 0.0;
        for (int c = 0; c < 6; ++c) {
          ASSERT_GE(w.at(r, c), 0.0);
          ASSERT_LE(w.at(r, c), 1.0);
          s += w.at(r, c);
        }
        EXPECT_NEAR(s, 1.0, 1e-12);
      }
  }
  EXPECT_THROW(cross_attention(ad::constant(Tensor({6, 8})), ad::constant(Tensor({5, 8})), p),
               Error);
}

TEST(CamForwardTest, PreservesShape) {
  std::mt19937_64 rng(6);
  const CamParams p = CamParams::init(SmallConfig({4, 2, 2}), rng);
  const Tensor x = random_tensor({8, 4, 8}, rng);
  EXPECT_EQ(cam_forward(x, random_tensor({8, 4, 8}, rng), p).shape(), x.shape());
  EXPECT_THROW(cam_forward(x, random_tensor({8, 4, 4}, rng), p), Error);
  EXPECT_THROW(cam_forward(random_tensor({6, 4, 8}, rng), random_tensor({6, 4, 8}, rng), p),
               Error);
}

TEST(CamForwardTest, ZeroQueryMakesEveryPatchIdentical) {
  std::mt19937_64 rng(7);
  CamParams p = CamParams::init(SmallConfig({2, 2, 2}), rng);
  p.query = ad::parameter(Tensor({8, 8}, 0.0));
  const Tensor x = random_tensor({4, 4, 4}, rng);
  const Tensor y = random_tensor({4, 4, 4}, rng);
  const Tensor m = tile_patches(cam_forward(x, y, p), p.config.patch);
  // Brute force: mean of side embeddings, through W^V and U.
  const Tensor emb = ad::matmul(ad::constant(tile_patches(y, p.config.patch)), p.embed).value();
  Tensor mean_row({1, 8}, 0.0);
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 8; ++c) mean_row[c] += emb.at(r, c) / 8.0;
  const Tensor expected =
      ad::matmul(ad::matmul(ad::constant(mean_row), p.value), p.unpack).value();
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 8; ++c) EXPECT_NEAR(m.at(r, c), expected[c], 1e-12);
}

TEST(CamForwardTest, PermutingPatchesOfBothInputsPermutesTheOutput) {
  std::mt19937_64 rng(8);
  const PatchDims dims{2, 2, 2};
  const CamParams p = CamParams::init(SmallConfig(dims), rng);
  const Shape shape{4, 4, 4};
  const Tensor x = random_tensor(shape, rng), y = random_tensor(shape, rng);
  const Tensor mx = tile_patches(x, dims), my = tile_patches(y, dims);
  const Tensor base = tile_patches(cam_forward(x, y, p), dims);
  std::vector<int> perm(8);
  std::iota(perm.begin(), perm.end(), 0);
  for (int trial = 0; trial < 5; ++trial) {
    std::shuffle(perm.begin(), perm.end(), rng);
    auto permute = [&](const Tensor& m) {
      Tensor out(m.shape());
      for (int r = 0; r < 8; ++r)
        for (int c = 0; c < 8; ++c) out.at(r, c) = m.at(perm[r], c);
      return out;
    };
    const Tensor out = tile_patches(cam_forward(untile_patches(permute(mx), shape, dims),
                                                untile_patches(permute(my), shape, dims), p),
                                    dims);
    for (int r = 0; r < 8; ++r)
      for (int c = 0; c < 8; ++c) EXPECT_NEAR(out.at(r, c), base.at(perm[r], c), 1e-12);
  }
}

TEST(CamForwardTest, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(9);
  CamParams p = CamParams::init(SmallConfig({2, 2, 2}, 8, 2), rng);
  Tensor x = random_tensor({4, 4, 4}, rng), y = random_tensor({4, 4, 4}, rng);
  const Tensor r = random_tensor({4, 4, 4}, rng);
  const ad::Var vx = ad::parameter(x), vy = ad::parameter(y);
  ad::backward(project(cam_forward(vx, vy, p).output, r));
  const auto f = [&] {
    const Tensor out = cam_forward(x, y, p);
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * r[i];
    return s;
  };
  EXPECT_LT(relative_error(vx.grad(), numeric_grad(f, x)), 1e-4);
  EXPECT_LT(relative_error(vy.grad(), numeric_grad(f, y)), 1e-4);
  for (ad::Var* m : {&p.embed, &p.query, &p.key, &p.value, &p.unpack}) {
    const Tensor analytic = m->grad();
    EXPECT_LT(relative_error(analytic, numeric_grad(f, m->mutable_value())), 1e-4);
  }
}

TEST(CamForwardTest, LargeInputsStayFinite) {
  std::mt19937_64 rng(10);
  const CamParams p = CamParams::init(SmallConfig({2, 2, 2}), rng);
  const Tensor out =
      cam_forward(random_tensor({4, 4, 4}, rng, -1e3, 1e3), random_tensor({4, 4, 4}, rng, -1e3, 1e3), p);
  for (double v : out.storage()) EXPECT_TRUE(std::isfinite(v));
}

}  // namespace
}  // namespace ndcc
