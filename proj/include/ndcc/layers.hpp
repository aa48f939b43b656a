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

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ndcc/autodiff.hpp"
#include "ndcc/tensor.hpp"

namespace ndcc {

// Named parameter list in canonical (insertion) order.
using ParamList = std::vector<std::pair<std::string, ad::Var>>;

inline constexpr double kGdnBetaFloor = 1e-6;

// Constrained GDN parameters: beta > 0, gamma >= 0.
struct GdnParams {
  Tensor beta;   // (C)
  Tensor gamma;  // (C, C)
};

Tensor gdn_forward(const Tensor& x, const GdnParams& p);
Tensor igdn_forward(const Tensor& x, const GdnParams& p);

// Unconstrained storage: beta = softplus(beta_raw) + floor,
// gamma = softplus(gamma_raw).
struct GdnRaw {
  ad::Var beta_raw;
  ad::Var gamma_raw;

  static GdnRaw init(int channels);
  static GdnRaw from_constrained(const GdnParams& p);
  ad::Var beta() const;
  ad::Var gamma() const;
  GdnParams constrained() const;
};

enum class Nonlinearity { kNone, kGdn, kIgdn };

struct LayerSpec {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 5;
  int stride = 2;
  Nonlinearity nonlinearity = Nonlinearity::kNone;
};

// A stack of strided convolutions (analysis) or transposed convolutions
// (synthesis) with "same" padding: each layer scales spatial dims by exactly
// 1/stride or stride.
struct TransformSpec {
  std::vector<LayerSpec> layers;
  bool transposed = false;

  int total_stride() const;
  void validate() const;
};

// Analysis stack 3 -> c0 -> c1 -> c2 -> out with GDN after all but the last.
TransformSpec make_analysis_spec(const std::vector<int>& channels, int in_channels,
                                 int kernel);
// Synthesis stack; layer i consumes in_channels[i]. IGDN after all but the last.
TransformSpec make_synthesis_spec(const std::vector<int>& in_channels,
                                  const std::vector<int>& out_channels, int kernel);

struct LayerParams {
  ad::Var weight;
  ad::Var bias;
  GdnRaw gdn;  // undefined Vars when the layer has no nonlinearity
};

struct TransformParams {
  std::vector<LayerParams> layers;

  void collect(const std::string& prefix, ParamList& out) const;
};

// Fan-in scaled uniform weights, zero biases, GDN beta = 1 and gamma = 0.1 I.
TransformParams init_transform(const TransformSpec& spec, std::mt19937_64& rng);

ad::Var apply_layer(const ad::Var& x, const LayerSpec& spec, const LayerParams& p,
                    bool transposed);

ad::Var analysis_transform(const ad::Var& img, const TransformSpec& spec,
                           const TransformParams& params);
Tensor analysis_transform(const Tensor& img, const TransformSpec& spec,
                          const TransformParams& params);

struct SynthesisOutput {
  ad::Var output;
  // Output of every layer; the last entry is the output itself.
  std::vector<ad::Var> features;
};

SynthesisOutput synthesis_forward(const ad::Var& latent, const TransformSpec& spec,
                                  const TransformParams& params);

// The common-information extractor is an analysis-shaped transform of y
// whose output shares the latent's spatial dims.
ad::Var common_extractor(const ad::Var& y, const TransformSpec& spec,
                         const TransformParams& params);
Tensor common_extractor(const Tensor& y, const TransformSpec& spec,
                        const TransformParams& params);

}  // namespace ndcc
