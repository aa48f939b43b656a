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

#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "ndcc/data.hpp"
#include "ndcc/model.hpp"
#include "ndcc/training.hpp"
#include "test_util.hpp"

namespace ndcc::testing {

inline ImagePair synthetic_pair(std::uint64_t seed, int height = 32, int width = 64) {
  SyntheticSpec s;
  s.seed = seed;
  s.height = height;
  s.width = width;
  return generate_synthetic_pair(s);
}

// Small enough for finite differences over every parameter.
inline ModelConfig tiny_config() {
  ModelConfig c = ModelConfig::desk();
  c.channels = {4, 4, 4, 4};
  c.common_channels = 2;
  c.kernel = 3;
  c.cam.embed_dim = 4;
  c.cam.attn_dim = 4;
  c.cam.heads = 2;
  c.cam.patch_channel_divisor = 2;
  return c;
}

// Training-mode objective with the quantization noise replayed from `noise_seed`.
inline LossBreakdown train_loss(const Model& model, const ImagePair& pair,
                                std::uint64_t noise_seed) {
  NoiseSource noise(noise_seed);
  return compute_loss(forward(model, pair, QuantMode::kTrain, &noise), pair, model);
}

// Normwise relative error between the analytic gradient of the objective and
// central differences, over all parameters at once.
inline double loss_gradient_error(const Model& model, const ImagePair& pair,
                                  std::uint64_t noise_seed, double h = 1e-6) {
  for (const auto& [name, var] : model.parameters()) var.zero_grad();
  ad::backward(train_loss(model, pair, noise_seed).loss);
  std::vector<Tensor> analytic;
  for (const auto& [name, var] : model.parameters()) analytic.push_back(var.grad());
  double diff = 0.0, na = 0.0, nn = 0.0;
  std::size_t k = 0;
  for (const auto& [name, var] : model.parameters()) {
    ad::Var v = var;
    const Tensor numeric = numeric_grad(
        [&] {
          ad::NoGradGuard guard;
          return train_loss(model, pair, noise_seed).total;
        },
        v.mutable_value(), h);
    const Tensor& a = analytic[k++];
    for (std::size_t i = 0; i < numeric.size(); ++i) {
      const double g = a.size() ? a[i] : 0.0;
      diff += (g - numeric[i]) * (g - numeric[i]);
      na += g * g;
      nn += numeric[i] * numeric[i];
    }
  }
  return std::sqrt(diff) / (std::sqrt(na) + std::sqrt(nn));
}

}  // namespace ndcc::testing
