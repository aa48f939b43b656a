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

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ndcc/tensor.hpp"

namespace ndcc {

// A correlated pair: x is the image to transmit, y the decoder-side
// information. Both are (3, H, W) in [0, 1].
struct ImagePair {
  Tensor x;
  Tensor y;
  std::string pair_id;

  void validate() const;
};

// Parameters of a synthetic stereo-like pair. y sees the same scene as x
// shifted right by disparity_px, with some patches occluded by unrelated
// content and additive Gaussian noise.
struct SyntheticSpec {
  int height = 32;
  int width = 64;
  int shapes = 10;
  int disparity_px = 4;
  double occlusion_fraction = 0.1;
  double noise_std = 0.01;
  std::uint64_t seed = 1;
  // "shapes" (random rectangles and discs) or "stripes" (one value per
  // canvas column, for index checks).
  std::string pattern = "shapes";

  void validate() const;
  nlohmann::json to_json() const;
  static SyntheticSpec from_json(const nlohmann::json& j);
};

ImagePair generate_synthetic_pair(const SyntheticSpec& spec);

// Center-crop to `crop`, then area-average down to `target`.
Tensor preprocess(const Tensor& img, int crop_h, int crop_w, int target_h, int target_w);

// Zero dims mean "leave images untouched".
struct PreprocessConfig {
  int crop_h = 0;
  int crop_w = 0;
  int target_h = 0;
  int target_w = 0;

  bool enabled() const { return crop_h > 0 && crop_w > 0 && target_h > 0 && target_w > 0; }
  Tensor apply(const Tensor& img) const;
  bool operator==(const PreprocessConfig&) const = default;
  nlohmann::json to_json() const;
  static PreprocessConfig from_json(const nlohmann::json& j);
};

// Split membership by pair id; stored as <root>/{train,val,test}.txt.
struct DatasetSplit {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
  bool swap_augment = false;

  void validate() const;
  const std::vector<std::string>& ids(const std::string& name) const;
  static DatasetSplit load(const std::filesystem::path& root);
  void save(const std::filesystem::path& root) const;
};

// Sorted ids of <root>/left/<id>.png that have a matching right image. An
// image present on only one side is an error naming the orphan stem; a
// missing root or empty layout yields no ids.
std::vector<std::string> list_pair_ids(const std::filesystem::path& root);

struct PairEntry {
  std::string id;
  bool swapped = false;
};

// Lazily loaded pairs under the <root>/left, <root>/right layout. With swap
// augmentation every pair is followed by its (y, x) counterpart.
class PairDataset {
 public:
  PairDataset(std::filesystem::path root, const std::vector<std::string>& ids,
              bool swap_augment, PreprocessConfig preprocess = {});

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::vector<PairEntry>& entries() const { return entries_; }
  ImagePair get(std::size_t i) const;
  std::vector<ImagePair> load_all() const;

 private:
  std::filesystem::path root_;
  std::vector<PairEntry> entries_;
  PreprocessConfig preprocess_;
};

PairDataset load_pair_dataset(const std::filesystem::path& root, const DatasetSplit& split,
                              const std::string& which, PreprocessConfig preprocess = {});

}  // namespace ndcc
