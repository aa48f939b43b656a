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

#include <memory>
#include <random>
#include <string>
#include <vector>

#include "ndcc/autodiff.hpp"
#include "ndcc/layers.hpp"
#include "ndcc/tensor.hpp"

namespace ndcc {

// 3-D patch geometry (channels x height x width).
struct PatchDims {
  int channels = 1;
  int height = 1;
  int width = 1;

  int size() const { return channels * height * width; }
  // Number of patches tiling a (C, H, W) tensor; throws unless each patch
  // dimension divides the corresponding tensor dimension.
  int count(const Shape& chw) const;
};

struct CamConfig {
  PatchDims patch;
  int embed_dim = 16;
  int attn_dim = 16;
  int heads = 2;

  void validate() const;
};

// Learned matrices of one cross-attention module. Embeddings are stored one
// patch per row, so a tensor tiled into N patches embeds to N x embed_dim.
struct CamParams {
  CamConfig config;
  ad::Var embed;   // patch_size x embed_dim
  ad::Var query;   // embed_dim x attn_dim
  ad::Var key;     // embed_dim x attn_dim
  ad::Var value;   // embed_dim x attn_dim
  ad::Var unpack;  // attn_dim x patch_size

  static CamParams init(const CamConfig& config, std::mt19937_64& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

// Flat source offsets of tile order: patches in (channel-block, row-block,
// col-block) order, elements within a patch in (c, h, w) order.
std::shared_ptr<const std::vector<int>> tile_index(const Shape& chw, const PatchDims& dims);

Tensor tile_patches(const Tensor& t, const PatchDims& dims);
Tensor untile_patches(const Tensor& m, const Shape& chw, const PatchDims& dims);
ad::Var tile_patches(const ad::Var& t, const PatchDims& dims);
ad::Var untile_patches(const ad::Var& m, const Shape& chw, const PatchDims& dims);

struct AttentionOutput {
  ad::Var output;               // N x attn_dim, heads concatenated
  std::vector<Tensor> weights;  // per head, N x N, rows sum to 1
};

// Multi-head scaled dot-product attention with queries from the primary
// embeddings and keys/values from the side-information embeddings. Each head
// uses attn_dim / heads columns and temperature 1 / sqrt(attn_dim / heads).
AttentionOutput cross_attention(const ad::Var& primary, const ad::Var& side,
                                const CamParams& params);

struct CamOutput {
  ad::Var output;  // same shape as the primary input
  std::vector<Tensor> weights;
};

// tile -> embed -> cross attention -> unpack -> untile.
CamOutput cam_forward(const ad::Var& primary, const ad::Var& side, const CamParams& params);
Tensor cam_forward(const Tensor& primary, const Tensor& side, const CamParams& params);

}  // namespace ndcc
