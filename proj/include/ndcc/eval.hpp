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

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ndcc/data.hpp"
#include "ndcc/model.hpp"
#include "ndcc/training.hpp"

namespace ndcc {

struct ImageEval {
  std::string pair_id;
  double bits_estimated = 0;
  std::size_t payload_bytes = 0;  // range-coded symbols only
  std::size_t file_bytes = 0;     // serialized bitstream, header included
  double bpp_estimated = 0;
  double bpp_coded = 0;
  double ms_ssim = 0;
};

// Compresses x, decodes it with y and scores the reconstruction.
ImageEval evaluate_pair(const Model& model, const ImagePair& pair);

struct RdRow {
  std::string model_id;
  std::string family;  // groups checkpoints for the monotonicity report
  double lambda = 0;
  std::string split;
  std::string pair_id;  // "MEAN" for the dataset mean
  double bpp_estimated = 0;
  double bpp_coded = 0;
  double ms_ssim = 0;
  double ms_ssim_db = 0;
};

struct NamedModel {
  std::string id;
  const Model* model = nullptr;
};

// Per-image rows followed by one MEAN row for each model.
std::vector<RdRow> rd_sweep(const std::vector<NamedModel>& models,
                            const std::vector<ImagePair>& pairs, const std::string& split);

void write_rd_csv(const std::filesystem::path& path, const std::vector<RdRow>& rows);

struct MonotonicityFlag {
  std::string family;
  std::string split;
  double lambda_low = 0, lambda_high = 0;
  double ms_ssim_low = 0, ms_ssim_high = 0;
};

// Flags every step where a family's mean MS-SSIM drops as lambda grows.
std::vector<MonotonicityFlag> monotonicity_report(const std::vector<RdRow>& rows);

struct AblationRow {
  int cam_count = 0;
  double lambda = 0;
  double bpp_estimated = 0;
  double bpp_coded = 0;
  double ms_ssim = 0;
  double ms_ssim_db = 0;
  bool diverged = false;
};

struct AblationReport {
  std::vector<AblationRow> rows;
  // Directional check: more CAMs give at least the MS-SSIM of fewer CAMs at
  // estimated bpp within the tolerance. Reported, never enforced.
  bool ordering_holds = true;
  std::vector<std::string> notes;
};

AblationReport ablate_cams(const ModelConfig& base, const std::vector<int>& counts,
                           const std::vector<ImagePair>& train_set,
                           const std::vector<ImagePair>& val_set,
                           const std::vector<ImagePair>& test_set, const TrainSchedule& schedule,
                           const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                           double bpp_tolerance = 0.10);

void write_ablation_csv(const std::filesystem::path& path, const AblationReport& report);

// Per-map min-max normalization to [0, 1]; a constant map renders as 0.
Tensor normalize_map(const Tensor& map);

// Writes v_x, v_y and v_cam of each requested channel after synthesis layer
// `layer` (1-based, at most cam_count).
std::vector<std::filesystem::path> dump_alignment(const Model& model, const ImagePair& pair,
                                                  int layer, const std::vector<int>& channels,
                                                  const std::filesystem::path& out_dir);

struct PrivateCommon {
  Tensor reconstruction;
  Tensor private_part;  // side information blocked
  Tensor common_part;   // input blocked
};

PrivateCommon private_common(const Model& model, const ImagePair& pair);
std::vector<std::filesystem::path> dump_private_common(const Model& model, const ImagePair& pair,
                                                       const std::filesystem::path& out_dir);

}  // namespace ndcc
