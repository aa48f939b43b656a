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
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ndcc/data.hpp"
#include "ndcc/model.hpp"

namespace ndcc {

// Rates are kept both in bits and in bits per image pixel; the objective is
// formed from the bpp values.
struct LossBreakdown {
  double rx_bits = 0, ry_bits = 0, rw_bits = 0;
  double rx = 0, ry = 0, rw = 0;
  double dx = 0, dy = 0;
  double lambda = 0, alpha = 0, beta = 0;
  double total = 0;
  ad::Var loss;  // differentiable total, undefined under NoGradGuard
};

// R_x + lambda D_x + alpha (R_y + lambda D_y) + beta R_w.
double combine_loss(double rx, double dx, double ry, double dy, double rw, double lambda,
                    double alpha, double beta);

// Throws kDiverged naming the first non-finite term.
LossBreakdown compute_loss(const LatentBundle& bundle, const ImagePair& pair, const Model& model,
                           double lambda, double alpha, double beta);
LossBreakdown compute_loss(const LatentBundle& bundle, const ImagePair& pair, const Model& model);

struct TrainSchedule {
  int max_iters = 500000;
  double learning_rate = 1e-4;
  int patience = 5;
  double decay_factor = 10.0;
  double lr_floor = 1e-7;
  int batch_size = 1;
  std::uint64_t seed = 1;
  int val_every = 5000;
  double min_improvement = 1e-4;
  int checkpoint_every = 0;  // 0: final checkpoint only

  static TrainSchedule full();
  static TrainSchedule desk();
  static TrainSchedule from_preset(const std::string& preset);

  void validate() const;
  nlohmann::json to_json() const;
  static TrainSchedule from_json(const nlohmann::json& j, const TrainSchedule& base);
};

// Adaptive moments with a running maximum of the second moment.
class AmsGrad {
 public:
  AmsGrad(ParamList params, double lr, double beta1 = 0.9, double beta2 = 0.999,
          double eps = 1e-8);

  void step();
  void zero_grad();
  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }
  std::int64_t steps() const { return t_; }

 private:
  ParamList params_;
  double lr_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  std::vector<Tensor> m_, v_, vmax_;
};

// Plateau rule: divide by `decay` after `patience` evaluations without an
// improvement larger than `min_improvement`, never below `floor`.
class PlateauDecay {
 public:
  PlateauDecay(double lr, int patience, double decay, double floor, double min_improvement);
  // Returns the learning rate to use after this evaluation.
  double observe(double val_loss);
  double learning_rate() const { return lr_; }

 private:
  double lr_;
  int patience_;
  double decay_, floor_, min_improvement_;
  double best_;
  int stale_ = 0;
};

struct MetricsRow {
  int iter = 0;
  double lr = 0;
  double rx = 0, ry = 0, rw = 0;  // bpp
  double dx = 0, dy = 0;
  double loss = 0;
  std::optional<double> val_ms_ssim;
  std::optional<double> val_bpp;
};

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows);

struct TrainOptions {
  std::optional<std::filesystem::path> out_dir;
  int progress_every = 0;  // 0: silent
  // Warm start: parameter values are copied from this model, whose config
  // must match the training config.
  const Model* initial = nullptr;
};

struct TrainResult {
  Model model;
  std::vector<MetricsRow> log;
  // L2 norm of each parameter's gradient at iteration 1.
  std::map<std::string, double> first_grad_norms;
  bool diverged = false;
  std::string message;
};

// Module prefix of a canonical parameter name ("g_sx.2.weight" -> "g_sx").
std::string parameter_group(const std::string& name);

// Validation: eval-mode loss, MS-SSIM and estimated bpp means.
struct ValidationResult {
  double loss = 0;
  double ms_ssim = 0;
  double bpp = 0;
};
ValidationResult validate_model(const Model& model, const std::vector<ImagePair>& pairs);

TrainResult train(const ModelConfig& config, const std::vector<ImagePair>& train_set,
                  const std::vector<ImagePair>& val_set, const TrainSchedule& schedule,
                  const TrainOptions& options = {});

}  // namespace ndcc
