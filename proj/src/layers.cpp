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

#include "ndcc/layers.hpp"

#include <cmath>

#include "ndcc/error.hpp"

namespace ndcc {
namespace {

double inverse_softplus(double y) { return std::log(std::expm1(y)); }

Tensor gdn_eval(const Tensor& x, const GdnParams& p, bool inverse) {
  check_shape(x.rank() == 3, "gdn: expected (C, H, W), got " + shape_string(x.shape()));
  check_shape(p.beta.size() == static_cast<std::size_t>(x.dim(0)),
              "gdn: " + std::to_string(p.beta.size()) + " parameters for " +
                  std::to_string(x.dim(0)) + " channels");
  ad::NoGradGuard guard;
  return ad::gdn(ad::constant(x), ad::constant(p.beta), ad::constant(p.gamma), inverse)
      .value();
}

}  // namespace

Tensor gdn_forward(const Tensor& x, const GdnParams& p) { return gdn_eval(x, p, false); }
Tensor igdn_forward(const Tensor& x, const GdnParams& p) { return gdn_eval(x, p, true); }

GdnRaw GdnRaw::init(int channels) {
  GdnParams p{Tensor({channels}, 1.0), Tensor({channels, channels}, 0.0)};
  for (int c = 0; c < channels; ++c) p.gamma.at(c, c) = 0.1;
  return from_constrained(p);
}

GdnRaw GdnRaw::from_constrained(const GdnParams& p) {
  // Exact zeros are unreachable through softplus; they map to a tiny positive
  // value instead.
  constexpr double kTiny = 1e-6;
  Tensor beta(p.beta.shape()), gamma(p.gamma.shape());
  for (std::size_t i = 0; i < beta.size(); ++i)
    beta[i] = inverse_softplus(std::max(p.beta[i] - kGdnBetaFloor, kTiny));
  for (std::size_t i = 0; i < gamma.size(); ++i)
    gamma[i] = inverse_softplus(std::max(p.gamma[i], kTiny));
  return {ad::parameter(std::move(beta)), ad::parameter(std::move(gamma))};
}

ad::Var GdnRaw::beta() const { return ad::add_scalar(ad::softplus(beta_raw), kGdnBetaFloor); }
ad::Var GdnRaw::gamma() const { return ad::softplus(gamma_raw); }

GdnParams GdnRaw::constrained() const {
  ad::NoGradGuard guard;
  return {beta().value(), gamma().value()};
}

int TransformSpec::total_stride() const {
  int s = 1;
  for (const LayerSpec& l : layers) s *= l.stride;
  return s;
}

void TransformSpec::validate() const {
  check_arg(!layers.empty(), "transform spec has no layers");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    check_arg(l.in_channels > 0 && l.out_channels > 0 && l.kernel > 0 && l.stride > 0,
              "transform layer " + std::to_string(i) + " has nonpositive geometry");
    check_arg(l.kernel % 2 == 1, "transform kernels must be odd");
  }
}

TransformSpec make_analysis_spec(const std::vector<int>& channels, int in_channels,
                                 int kernel) {
  TransformSpec spec;
  int in = in_channels;
  for (std::size_t i = 0; i < channels.size(); ++i) {
    const bool last = i + 1 == channels.size();
    spec.layers.push_back(
        {in, channels[i], kernel, 2, last ? Nonlinearity::kNone : Nonlinearity::kGdn});
    in = channels[i];
  }
  return spec;
}

TransformSpec make_synthesis_spec(const std::vector<int>& in_channels,
                                  const std::vector<int>& out_channels, int kernel) {
  check_arg(in_channels.size() == out_channels.size(),
            "synthesis spec: channel lists differ in length");
  TransformSpec spec;
  spec.transposed = true;
  for (std::size_t i = 0; i < in_channels.size(); ++i) {
    const bool last = i + 1 == in_channels.size();
    spec.layers.push_back({in_channels[i], out_channels[i], kernel, 2,
                           last ? Nonlinearity::kNone : Nonlinearity::kIgdn});
  }
  return spec;
}

void TransformParams::collect(const std::string& prefix, ParamList& out) const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string base = prefix + "." + std::to_string(i);
    out.emplace_back(base + ".weight", layers[i].weight);
    out.emplace_back(base + ".bias", layers[i].bias);
    if (layers[i].gdn.beta_raw.defined()) {
      out.emplace_back(base + ".gdn.beta", layers[i].gdn.beta_raw);
      out.emplace_back(base + ".gdn.gamma", layers[i].gdn.gamma_raw);
    }
  }
}

TransformParams init_transform(const TransformSpec& spec, std::mt19937_64& rng) {
  spec.validate();
  TransformParams params;
  for (const LayerSpec& l : spec.layers) {
    LayerParams p;
    const int k = l.kernel;
    Shape shape = spec.transposed ? Shape{l.in_channels, l.out_channels, k, k}
                                  : Shape{l.out_channels, l.in_channels, k, k};
    // A transposed conv output sees about in*k*k/stride^2 inputs.
    double fan_in = static_cast<double>(l.in_channels) * k * k;
    if (spec.transposed) fan_in /= static_cast<double>(l.stride * l.stride);
    const double bound = 1.0 / std::sqrt(fan_in);
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor w(shape);
    for (double& v : w.storage()) v = dist(rng);
    p.weight = ad::parameter(std::move(w));
    p.bias = ad::parameter(Tensor({l.out_channels}));
    if (l.nonlinearity != Nonlinearity::kNone) p.gdn = GdnRaw::init(l.out_channels);
    params.layers.push_back(std::move(p));
  }
  return params;
}

ad::Var apply_layer(const ad::Var& x, const LayerSpec& spec, const LayerParams& p,
                    bool transposed) {
  const int pad = spec.kernel / 2;
  ad::Var y;
  if (transposed) {
    y = ad::conv_transpose2d(x, p.weight, p.bias, spec.stride, pad,
                             x.value().dim(1) * spec.stride, x.value().dim(2) * spec.stride);
  } else {
    check_shape(x.value().dim(1) % spec.stride == 0 && x.value().dim(2) % spec.stride == 0,
                "conv layer input " + shape_string(x.shape()) +
                    " not divisible by stride " + std::to_string(spec.stride));
    y = ad::conv2d(x, p.weight, p.bias, spec.stride, pad);
  }
  switch (spec.nonlinearity) {
    case Nonlinearity::kGdn: return ad::gdn(y, p.gdn.beta(), p.gdn.gamma(), false);
    case Nonlinearity::kIgdn: return ad::gdn(y, p.gdn.beta(), p.gdn.gamma(), true);
    case Nonlinearity::kNone: break;
  }
  return y;
}

ad::Var analysis_transform(const ad::Var& img, const TransformSpec& spec,
                           const TransformParams& params) {
  check_shape(img.value().rank() == 3, "analysis input must be (C, H, W)");
  check_shape(img.value().dim(0) == spec.layers.front().in_channels,
              "analysis input has " + std::to_string(img.value().dim(0)) +
                  " channels, expected " + std::to_string(spec.layers.front().in_channels));
  const int s = spec.total_stride();
  check_shape(img.value().dim(1) % s == 0 && img.value().dim(2) % s == 0,
              "image dims " + std::to_string(img.value().dim(1)) + "x" +
                  std::to_string(img.value().dim(2)) + " must be divisible by " +
                  std::to_string(s));
  ad::Var x = img;
  for (std::size_t i = 0; i < spec.layers.size(); ++i)
    x = apply_layer(x, spec.layers[i], params.layers[i], false);
  return x;
}

Tensor analysis_transform(const Tensor& img, const TransformSpec& spec,
                          const TransformParams& params) {
  ad::NoGradGuard guard;
  return analysis_transform(ad::constant(img), spec, params).value();
}

SynthesisOutput synthesis_forward(const ad::Var& latent, const TransformSpec& spec,
                                  const TransformParams& params) {
  check_shape(latent.value().rank() == 3 &&
                  latent.value().dim(0) == spec.layers.front().in_channels,
              "synthesis input " + shape_string(latent.shape()) + " does not have " +
                  std::to_string(spec.layers.front().in_channels) + " channels");
  SynthesisOutput out;
  ad::Var x = latent;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    x = apply_layer(x, spec.layers[i], params.layers[i], true);
    out.features.push_back(x);
  }
  out.output = x;
  return out;
}

ad::Var common_extractor(const ad::Var& y, const TransformSpec& spec,
                         const TransformParams& params) {
  return analysis_transform(y, spec, params);
}

Tensor common_extractor(const Tensor& y, const TransformSpec& spec,
                        const TransformParams& params) {
  return analysis_transform(y, spec, params);
}

}  // namespace ndcc
