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

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ndcc/autodiff.hpp"
#include "ndcc/cam.hpp"
#include "ndcc/data.hpp"
#include "ndcc/entropy.hpp"
#include "ndcc/layers.hpp"

namespace ndcc {

// Rate-distortion trade-offs; the bitstream's lambda id indexes this grid.
inline constexpr std::array<double, 6> kLambdaGrid = {4, 8, 16, 32, 64, 128};
inline constexpr std::uint16_t kLambdaOffGrid = 0xFFFF;

struct CamSettings {
  int embed_dim = 16;
  int attn_dim = 16;
  int heads = 2;
  // Patch dims at decoder depth i are (C_i / divisor, patch_h, patch_w).
  int patch_channel_divisor = 4;
  int patch_h = 2;
  int patch_w = 2;
};

struct ModelConfig {
  std::string name = "ndcc";
  std::string preset = "desk";
  // Analysis channels; the last entry is the latent channel count.
  std::vector<int> channels = {32, 32, 32, 48};
  int common_channels = 16;
  int kernel = 5;
  int cam_count = 3;
  CamSettings cam;
  double lambda = 16.0;
  double alpha = 1.0;
  double beta = 1e-3;
  int cdf_precision = 16;
  std::uint64_t init_seed = 7;
  PreprocessConfig preprocess;

  static ModelConfig desk();
  static ModelConfig full();
  static ModelConfig from_preset(const std::string& preset);

  void validate() const;
  int latent_channels() const { return channels.back(); }
  int synthesis_layers() const { return static_cast<int>(channels.size()); }
  std::uint16_t lambda_id() const;

  TransformSpec primary_analysis_spec() const;
  TransformSpec side_analysis_spec() const;
  TransformSpec common_spec() const;
  TransformSpec primary_synthesis_spec() const;
  TransformSpec side_synthesis_spec() const;
  // CAM after synthesis layer `index` (0-based).
  CamConfig cam_config(int index) const;

  // Every field is optional; missing fields take the preset's defaults.
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

using ModelHash = std::array<std::uint8_t, 16>;

class Model {
 public:
  explicit Model(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  const ParamList& parameters() const { return params_; }
  const ad::Var& parameter(const std::string& name) const;

  // First 16 bytes of SHA-256 over the config echo and all parameter bytes.
  ModelHash hash() const;

  TransformSpec g_ax_spec, g_ay_spec, f_spec, g_sx_spec, g_sy_spec;
  TransformParams g_ax, g_ay, f, g_sx, g_sy;
  std::vector<CamParams> cams;
  FactorizedDensity density_vx, density_vy, density_w;

 private:
  ModelConfig config_;
  ParamList params_;
};

struct LatentBundle {
  ad::Var v_x;
  ad::Var v_x_hat;  // noisy (train) or rounded (eval)
  ad::Var v_y;
  ad::Var w;
  std::vector<ad::Var> vx_features;
  std::vector<ad::Var> vy_features;
  std::vector<ad::Var> cam_features;
  std::vector<std::vector<Tensor>> cam_weights;
  ad::Var x_hat;
  ad::Var y_hat;
};

// Full pipeline. v_y and w are used raw; outputs are clamped to [0, 1] in
// eval mode only.
LatentBundle forward(const Model& model, const ImagePair& pair, QuantMode mode,
                     NoiseSource* noise = nullptr);

// Decoder side from an already quantized latent and the side information.
LatentBundle decode_latent(const Model& model, const ad::Var& v_x_hat, const ad::Var& y,
                           bool clamp_output);

// Uses only x and the parameters.
Bitstream compress(const Tensor& x, const Model& model);
Tensor decompress(const Bitstream& stream, const Tensor& y, const Model& model);

enum class Block { kSideInfo, kInput };
// Replaces y (kSideInfo) or x (kInput) with a constant 0.5 image and returns
// the eval-mode reconstruction of x.
Tensor blocked_forward(const ImagePair& pair, Block which, const Model& model);

// Estimated bits of a rounded latent under the v_x density.
double estimated_bits(const Tensor& v_x_hat, const Model& model);

void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

std::string hash_hex(const ModelHash& hash);

}  // namespace ndcc
