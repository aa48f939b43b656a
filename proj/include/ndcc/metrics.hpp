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

#include <vector>

#include "ndcc/autodiff.hpp"
#include "ndcc/tensor.hpp"

namespace ndcc {

// Multi-scale SSIM settings. Defaults are the canonical five-scale values.
struct MsSsimOptions {
  int scales = 5;
  std::vector<double> weights = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
};

std::vector<double> gaussian_taps(int size, double sigma);

// Largest scale count <= options.scales with min(H, W) >= window * 2^(s-1).
// Throws if even one scale does not fit.
int effective_scales(int height, int width, const MsSsimOptions& options);

// Per channel: prod_{j<M} cs_j^{w_j} * ssim_M^{w_M} with negative terms
// clipped to 0, averaged over channels. When fewer scales fit than
// configured, the leading weights are renormalized to sum to 1 and a warning
// is logged once.
ad::Var ms_ssim(const ad::Var& a, const ad::Var& b, const MsSsimOptions& options = {});
double ms_ssim(const Tensor& a, const Tensor& b, const MsSsimOptions& options = {});

// -10 log10(1 - v); +inf when v == 1.
double to_db(double ms_ssim_value);
double from_db(double db);

double bpp(double bits, int height, int width);

}  // namespace ndcc
