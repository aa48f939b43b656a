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

#include "ndcc/metrics.hpp"

#include <atomic>
#include <cmath>
#include <iostream>
#include <limits>

#include "ndcc/error.hpp"

namespace ndcc {

std::vector<double> gaussian_taps(int size, double sigma) {
  std::vector<double> taps(static_cast<std::size_t>(size));
  const double center = (size - 1) / 2.0;
  double total = 0.0;
  for (int i = 0; i < size; ++i) {
    const double d = i - center;
    total += (taps[i] = std::exp(-d * d / (2.0 * sigma * sigma)));
  }
  for (double& t : taps) t /= total;
  return taps;
}

int effective_scales(int height, int width, const MsSsimOptions& options) {
  const int side = std::min(height, width);
  check_shape(side >= options.window,
              "ms_ssim: image " + std::to_string(height) + "x" + std::to_string(width) +
                  " is smaller than the " + std::to_string(options.window) + "-tap window");
  int s = 1;
  while (s < options.scales && side >= options.window * (1 << s)) ++s;
  return s;
}

ad::Var ms_ssim(const ad::Var& a, const ad::Var& b, const MsSsimOptions& options) {
  check_shape(a.shape() == b.shape(), "ms_ssim: shapes " + shape_string(a.shape()) + " and " +
                                          shape_string(b.shape()) + " differ");
  check_shape(a.value().rank() == 3, "ms_ssim expects (C, H, W) images");
  check_arg(static_cast<int>(options.weights.size()) >= options.scales,
            "ms_ssim: fewer weights than scales");
  const int scales = effective_scales(a.value().dim(1), a.value().dim(2), options);
  double weight_sum = 0.0;
  for (int j = 0; j < scales; ++j) weight_sum += options.weights[j];
  if (scales < options.scales) {
    static std::atomic<bool> warned{false};
    if (!warned.exchange(true))
      std::cerr << "warning: ms_ssim: " << a.value().dim(1) << "x" << a.value().dim(2)
                << " supports " << scales << " of " << options.scales
                << " scales; weights renormalized\n";
  }
  const auto taps = gaussian_taps(options.window, options.sigma);
  const double c1 = std::pow(options.k1 * options.dynamic_range, 2);
  const double c2 = std::pow(options.k2 * options.dynamic_range, 2);

  ad::Var x = a, y = b;
  ad::Var product;
  for (int j = 0; j < scales; ++j) {
    const ad::Var mu_x = ad::blur_valid(x, taps);
    const ad::Var mu_y = ad::blur_valid(y, taps);
    const ad::Var mu_xx = ad::square(mu_x);
    const ad::Var mu_yy = ad::square(mu_y);
    const ad::Var mu_xy = ad::mul(mu_x, mu_y);
    const ad::Var var_x = ad::sub(ad::blur_valid(ad::square(x), taps), mu_xx);
    const ad::Var var_y = ad::sub(ad::blur_valid(ad::square(y), taps), mu_yy);
    const ad::Var cov = ad::sub(ad::blur_valid(ad::mul(x, y), taps), mu_xy);
    const ad::Var cs_map = ad::div(ad::add_scalar(ad::scale(cov, 2.0), c2),
                                   ad::add_scalar(ad::add(var_x, var_y), c2));
    ad::Var term;
    if (j + 1 < scales) {
      term = ad::mean_hw(cs_map);
    } else {
      const ad::Var l_map = ad::div(ad::add_scalar(ad::scale(mu_xy, 2.0), c1),
                                    ad::add_scalar(ad::add(mu_xx, mu_yy), c1));
      term = ad::mean_hw(ad::mul(l_map, cs_map));
    }
    const ad::Var powered = ad::pow_scalar(ad::relu(term), options.weights[j] / weight_sum);
    product = product.defined() ? ad::mul(product, powered) : powered;
    if (j + 1 < scales) {
      x = ad::avgpool2(x);
      y = ad::avgpool2(y);
    }
  }
  return ad::mean(product);
}

double ms_ssim(const Tensor& a, const Tensor& b, const MsSsimOptions& options) {
  ad::NoGradGuard guard;
  return ms_ssim(ad::constant(a), ad::constant(b), options).value().item();
}

double to_db(double v) {
  check_arg(v >= 0.0 && v <= 1.0, "to_db: ms_ssim must be in [0, 1]");
  if (v == 1.0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(1.0 - v);
}

double from_db(double db) { return 1.0 - std::pow(10.0, -db / 10.0); }

double bpp(double bits, int height, int width) {
  return bits / (static_cast<double>(height) * width);
}

}  // namespace ndcc
