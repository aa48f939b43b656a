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

#include <cmath>

#include "ndcc/error.hpp"

namespace ndcc {

int PatchDims::count(const Shape& chw) const {
  check_shape(chw.size() == 3, "patch tiling needs a (C, H, W) tensor");
  check_shape(channels > 0 && height > 0 && width > 0, "patch dims must be positive");
  check_shape(chw[0] % channels == 0 && chw[1] % height == 0 && chw[2] % width == 0,
              "tensor " + shape_string(chw) + " is not divisible into patches of (" +
                  std::to_string(channels) + "x" + std::to_string(height) + "x" +
                  std::to_string(width) + ")");
  return (chw[0] / channels) * (chw[1] / height) * (chw[2] / width);
}

void CamConfig::validate() const {
  check_arg(embed_dim > 0 && attn_dim > 0 && heads > 0, "cam dims must be positive");
  check_arg(attn_dim % heads == 0,
            "attention dim " + std::to_string(attn_dim) + " is not divisible by " +
                std::to_string(heads) + " heads");
  check_arg(patch.channels > 0 && patch.height > 0 && patch.width > 0,
            "cam patch dims must be positive");
}

CamParams CamParams::init(const CamConfig& config, std::mt19937_64& rng) {
  config.validate();
  auto matrix = [&rng](int rows, int cols) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor t({rows, cols});
    for (double& v : t.storage()) v = dist(rng);
    return ad::parameter(std::move(t));
  };
  CamParams p;
  p.config = config;
  const int patch = config.patch.size();
  p.embed = matrix(patch, config.embed_dim);
  p.query = matrix(config.embed_dim, config.attn_dim);
  p.key = matrix(config.embed_dim, config.attn_dim);
  p.value = matrix(config.embed_dim, config.attn_dim);
  p.unpack = matrix(config.attn_dim, patch);
  return p;
}

void CamParams::collect(const std::string& prefix, ParamList& out) const {
  out.emplace_back(prefix + ".embed", embed);
  out.emplace_back(prefix + ".query", query);
  out.emplace_back(prefix + ".key", key);
  out.emplace_back(prefix + ".value", value);
  out.emplace_back(prefix + ".unpack", unpack);
}

std::shared_ptr<const std::vector<int>> tile_index(const Shape& chw, const PatchDims& d) {
  const int n = d.count(chw);
  const int height = chw[1], width = chw[2];
  const int blocks_h = height / d.height, blocks_w = width / d.width;
  auto index = std::make_shared<std::vector<int>>(static_cast<std::size_t>(n) * d.size());
  std::size_t out = 0;
  for (int cb = 0; cb < chw[0] / d.channels; ++cb)
    for (int hb = 0; hb < blocks_h; ++hb)
      for (int wb = 0; wb < blocks_w; ++wb)
        for (int pc = 0; pc < d.channels; ++pc)
          for (int ph = 0; ph < d.height; ++ph)
            for (int pw = 0; pw < d.width; ++pw)
              (*index)[out++] = ((cb * d.channels + pc) * height + hb * d.height + ph) * width +
                                wb * d.width + pw;
  return index;
}

namespace {

std::shared_ptr<const std::vector<int>> untile_index(const Shape& chw, const PatchDims& d) {
  const auto forward = tile_index(chw, d);
  auto inverse = std::make_shared<std::vector<int>>(forward->size());
  for (std::size_t i = 0; i < forward->size(); ++i)
    (*inverse)[static_cast<std::size_t>((*forward)[i])] = static_cast<int>(i);
  return inverse;
}

}  // namespace

ad::Var tile_patches(const ad::Var& t, const PatchDims& dims) {
  const int n = dims.count(t.shape());
  return ad::gather(t, tile_index(t.shape(), dims), {n, dims.size()});
}

ad::Var untile_patches(const ad::Var& m, const Shape& chw, const PatchDims& dims) {
  const int n = dims.count(chw);
  check_shape(m.value().rank() == 2 && m.value().dim(0) == n && m.value().dim(1) == dims.size(),
              "untile: matrix " + shape_string(m.shape()) + " does not match " +
                  std::to_string(n) + " patches of size " + std::to_string(dims.size()));
  return ad::gather(m, untile_index(chw, dims), chw);
}

Tensor tile_patches(const Tensor& t, const PatchDims& dims) {
  ad::NoGradGuard guard;
  return tile_patches(ad::constant(t), dims).value();
}

Tensor untile_patches(const Tensor& m, const Shape& chw, const PatchDims& dims) {
  ad::NoGradGuard guard;
  return untile_patches(ad::constant(m), chw, dims).value();
}

AttentionOutput cross_attention(const ad::Var& primary, const ad::Var& side,
                                const CamParams& params) {
  const CamConfig& cfg = params.config;
  check_shape(primary.value().rank() == 2 && side.value().rank() == 2,
              "cross_attention expects embedding matrices");
  check_shape(primary.value().dim(0) == side.value().dim(0),
              "cross_attention: patch counts differ (" +
                  std::to_string(primary.value().dim(0)) + " vs " +
                  std::to_string(side.value().dim(0)) + ")");
  const ad::Var q = ad::matmul(primary, params.query);
  const ad::Var k = ad::matmul(side, params.key);
  const ad::Var v = ad::matmul(side, params.value);
  const int head_dim = cfg.attn_dim / cfg.heads;
  const double temperature = 1.0 / std::sqrt(static_cast<double>(head_dim));
  AttentionOutput out;
  std::vector<ad::Var> heads;
  for (int h = 0; h < cfg.heads; ++h) {
    const ad::Var qh = ad::slice_cols(q, h * head_dim, head_dim);
    const ad::Var kh = ad::slice_cols(k, h * head_dim, head_dim);
    const ad::Var vh = ad::slice_cols(v, h * head_dim, head_dim);
    const ad::Var weights =
        ad::softmax_rows(ad::scale(ad::matmul(qh, ad::transpose(kh)), temperature));
    out.weights.push_back(weights.value());
    heads.push_back(ad::matmul(weights, vh));
  }
  out.output = cfg.heads == 1 ? heads.front() : ad::concat_cols(heads);
  return out;
}

CamOutput cam_forward(const ad::Var& primary, const ad::Var& side, const CamParams& params) {
  check_shape(primary.shape() == side.shape(),
              "cam: primary " + shape_string(primary.shape()) + " and side " +
                  shape_string(side.shape()) + " differ");
  const PatchDims& dims = params.config.patch;
  const ad::Var px = ad::matmul(tile_patches(primary, dims), params.embed);
  const ad::Var py = ad::matmul(tile_patches(side, dims), params.embed);
  AttentionOutput att = cross_attention(px, py, params);
  CamOutput out;
  out.output = untile_patches(ad::matmul(att.output, params.unpack), primary.shape(), dims);
  out.weights = std::move(att.weights);
  return out;
}

Tensor cam_forward(const Tensor& primary, const Tensor& side, const CamParams& params) {
  ad::NoGradGuard guard;
  return cam_forward(ad::constant(primary), ad::constant(side), params).output.value();
}

}  // namespace ndcc
