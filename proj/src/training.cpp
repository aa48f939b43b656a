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

#include "ndcc/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <numeric>
#include <random>

#include "ndcc/error.hpp"
#include "ndcc/metrics.hpp"

namespace ndcc {

namespace fs = std::filesystem;

double combine_loss(double rx, double dx, double ry, double dy, double rw, double lambda,
                    double alpha, double beta) {
  return rx + lambda * dx + alpha * (ry + lambda * dy) + beta * rw;
}

namespace {

// The term's input is checked too: clipping inside MS-SSIM or the
// likelihood floor could otherwise map NaN to a finite value.
ad::Var checked(const char* term, const ad::Var& input, const std::function<ad::Var()>& f) {
  for (double x : input.value().values())
    if (!std::isfinite(x))
      fail(ErrorKind::kDiverged, std::string("loss term ") + term + " has a non-finite input");
  ad::Var v;
  try {
    v = f();
  } catch (const Error& e) {
    fail(ErrorKind::kDiverged, std::string("loss term ") + term + " failed: " + e.what());
  }
  const double x = v.value().item();
  if (!std::isfinite(x))
    fail(ErrorKind::kDiverged, std::string("loss term ") + term + " is not finite");
  return v;
}

}  // namespace

LossBreakdown compute_loss(const LatentBundle& bundle, const ImagePair& pair, const Model& model,
                           double lambda, double alpha, double beta) {
  check_arg(bundle.v_x_hat.defined() && bundle.v_y.defined() && bundle.w.defined() &&
                bundle.x_hat.defined() && bundle.y_hat.defined(),
            "compute_loss: incomplete latent bundle");
  const double pixels = static_cast<double>(pair.x.dim(1)) * pair.x.dim(2);
  const ad::Var x = ad::constant(pair.x);
  const ad::Var y = ad::constant(pair.y);

  const ad::Var rx =
      checked("R_x", bundle.v_x_hat, [&] { return rate_bits(model.density_vx.likelihood(bundle.v_x_hat)); });
  const ad::Var ry =
      checked("R_y", bundle.v_y, [&] { return continuous_log_density(bundle.v_y, model.density_vy); });
  const ad::Var rw =
      checked("R_w", bundle.w, [&] { return continuous_log_density(bundle.w, model.density_w); });
  const ad::Var dx = checked("D_x", bundle.x_hat, [&] {
    return ad::add_scalar(ad::scale(ms_ssim(bundle.x_hat, x), -1.0), 1.0);
  });
  const ad::Var dy = checked("D_y", bundle.y_hat, [&] {
    return ad::add_scalar(ad::scale(ms_ssim(bundle.y_hat, y), -1.0), 1.0);
  });

  LossBreakdown b;
  b.rx_bits = rx.value().item();
  b.ry_bits = ry.value().item();
  b.rw_bits = rw.value().item();
  b.rx = b.rx_bits / pixels;
  b.ry = b.ry_bits / pixels;
  b.rw = b.rw_bits / pixels;
  b.dx = dx.value().item();
  b.dy = dy.value().item();
  b.lambda = lambda;
  b.alpha = alpha;
  b.beta = beta;
  b.total = combine_loss(b.rx, b.dx, b.ry, b.dy, b.rw, lambda, alpha, beta);
  if (!std::isfinite(b.total)) fail(ErrorKind::kDiverged, "loss term L is not finite");
  if (ad::grad_enabled()) {
    const double inv = 1.0 / pixels;
    ad::Var side = ad::add(ad::scale(ry, inv), ad::scale(dy, lambda));
    b.loss = ad::add(ad::add(ad::scale(rx, inv), ad::scale(dx, lambda)),
                     ad::add(ad::scale(side, alpha), ad::scale(rw, beta * inv)));
  }
  return b;
}

LossBreakdown compute_loss(const LatentBundle& bundle, const ImagePair& pair, const Model& model) {
  const ModelConfig& c = model.config();
  return compute_loss(bundle, pair, model, c.lambda, c.alpha, c.beta);
}

// --- schedule --------------------------------------------------------------

TrainSchedule TrainSchedule::full() { return TrainSchedule{}; }

TrainSchedule TrainSchedule::desk() {
  TrainSchedule s;
  s.max_iters = 2000;
  s.val_every = 500;
  return s;
}

TrainSchedule TrainSchedule::from_preset(const std::string& preset) {
  if (preset == "desk") return desk();
  if (preset == "full") return full();
  fail(ErrorKind::kInvalidArgument, "unknown preset '" + preset + "' (expected desk or full)");
}

void TrainSchedule::validate() const {
  check_arg(max_iters >= 0, "max_iters must be non-negative");
  check_arg(learning_rate > 0.0, "learning rate must be positive");
  check_arg(lr_floor > 0.0 && lr_floor <= learning_rate, "lr floor must be in (0, learning rate]");
  check_arg(decay_factor > 1.0, "decay factor must exceed 1");
  check_arg(patience >= 1, "patience must be at least 1");
  check_arg(batch_size >= 1, "batch size must be at least 1");
  check_arg(val_every >= 0 && checkpoint_every >= 0, "intervals must be non-negative");
  check_arg(min_improvement >= 0.0, "min_improvement must be non-negative");
}

nlohmann::json TrainSchedule::to_json() const {
  return {{"max_iters", max_iters},       {"learning_rate", learning_rate},
          {"patience", patience},         {"decay_factor", decay_factor},
          {"lr_floor", lr_floor},         {"batch_size", batch_size},
          {"seed", seed},                 {"val_every", val_every},
          {"min_improvement", min_improvement}, {"checkpoint_every", checkpoint_every}};
}

TrainSchedule TrainSchedule::from_json(const nlohmann::json& j, const TrainSchedule& base) {
  TrainSchedule s = base;
  s.max_iters = j.value("max_iters", s.max_iters);
  s.learning_rate = j.value("learning_rate", s.learning_rate);
  s.patience = j.value("patience", s.patience);
  s.decay_factor = j.value("decay_factor", s.decay_factor);
  s.lr_floor = j.value("lr_floor", s.lr_floor);
  s.batch_size = j.value("batch_size", s.batch_size);
  s.seed = j.value("seed", s.seed);
  s.val_every = j.value("val_every", s.val_every);
  s.min_improvement = j.value("min_improvement", s.min_improvement);
  s.checkpoint_every = j.value("checkpoint_every", s.checkpoint_every);
  s.validate();
  return s;
}

// --- optimizer -------------------------------------------------------------

AmsGrad::AmsGrad(ParamList params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& [name, p] : params_) {
    m_.emplace_back(p.shape());
    v_.emplace_back(p.shape());
    vmax_.emplace_back(p.shape());
  }
}

void AmsGrad::zero_grad() {
  for (const auto& [name, p] : params_) p.zero_grad();
}

void AmsGrad::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = std::sqrt(1.0 - std::pow(beta2_, static_cast<double>(t_)));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    ad::Var p = params_[k].second;
    const Tensor& g = p.grad();
    if (g.size() == 0) continue;
    Tensor& w = p.mutable_value();
    double* m = m_[k].data();
    double* v = v_[k].data();
    double* vm = vmax_[k].data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      vm[i] = std::max(vm[i], v[i]);
      w[i] -= lr_ / c1 * m[i] / (std::sqrt(vm[i]) / c2 + eps_);
    }
  }
}

PlateauDecay::PlateauDecay(double lr, int patience, double decay, double floor,
                           double min_improvement)
    : lr_(lr),
      patience_(patience),
      decay_(decay),
      floor_(floor),
      min_improvement_(min_improvement),
      best_(std::numeric_limits<double>::infinity()) {}

double PlateauDecay::observe(double val_loss) {
  if (val_loss < best_ - min_improvement_) {
    best_ = val_loss;
    stale_ = 0;
  } else if (++stale_ >= patience_) {
    lr_ = std::max(lr_ / decay_, floor_);
    stale_ = 0;
  }
  return lr_;
}

// --- loop ------------------------------------------------------------------

void write_metrics_csv(const fs::path& path, const std::vector<MetricsRow>& rows) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out.precision(17);
  out << "iter,lr,R_x,R_y,R_w,D_x,D_y,L,val_ms_ssim,val_bpp\n";
  for (const auto& r : rows) {
    out << r.iter << ',' << r.lr << ',' << r.rx << ',' << r.ry << ',' << r.rw << ',' << r.dx
        << ',' << r.dy << ',' << r.loss << ',';
    if (r.val_ms_ssim) out << *r.val_ms_ssim;
    out << ',';
    if (r.val_bpp) out << *r.val_bpp;
    out << '\n';
  }
}

std::string parameter_group(const std::string& name) {
  const auto dot = name.find('.');
  if (dot == std::string::npos) return name;
  if (name.compare(0, dot, "cam") == 0 || name.compare(0, dot, "density") == 0) {
    const auto second = name.find('.', dot + 1);
    return name.substr(0, second);
  }
  return name.substr(0, dot);
}

ValidationResult validate_model(const Model& model, const std::vector<ImagePair>& pairs) {
  ValidationResult r;
  if (pairs.empty()) return r;
  ad::NoGradGuard guard;
  for (const auto& p : pairs) {
    const LatentBundle b = forward(model, p, QuantMode::kEval);
    const LossBreakdown l = compute_loss(b, p, model);
    r.loss += l.total;
    r.ms_ssim += 1.0 - l.dx;
    r.bpp += l.rx;
  }
  const double n = static_cast<double>(pairs.size());
  r.loss /= n;
  r.ms_ssim /= n;
  r.bpp /= n;
  return r;
}

namespace {

std::vector<Tensor> snapshot(const Model& model) {
  std::vector<Tensor> out;
  for (const auto& [name, p] : model.parameters()) out.push_back(p.value());
  return out;
}

void restore(Model& model, const std::vector<Tensor>& values) {
  std::size_t k = 0;
  for (const auto& [name, p] : model.parameters()) {
    ad::Var v = p;
    v.mutable_value() = values[k++];
  }
}

}  // namespace

TrainResult train(const ModelConfig& config, const std::vector<ImagePair>& train_set,
                  const std::vector<ImagePair>& val_set, const TrainSchedule& schedule,
                  const TrainOptions& options) {
  schedule.validate();
  check_arg(!train_set.empty() || schedule.max_iters == 0, "training set is empty");
  for (const auto& p : train_set) p.validate();

  TrainResult result{Model(config), {}, {}, false, {}};
  Model& model = result.model;
  if (options.initial) {
    check_arg(options.initial->config().to_json() == model.config().to_json(),
              "warm-start model config does not match the training config");
    restore(model, snapshot(*options.initial));
  }
  AmsGrad opt(model.parameters(), schedule.learning_rate);
  PlateauDecay plateau(schedule.learning_rate, schedule.patience, schedule.decay_factor,
                       schedule.lr_floor, schedule.min_improvement);
  std::mt19937_64 order_rng(schedule.seed);
  NoiseSource noise(schedule.seed ^ 0x9E3779B97F4A7C15ULL);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  std::vector<Tensor> last_good = snapshot(model);

  const auto save = [&](const std::string& file) {
    if (options.out_dir) save_checkpoint(model, *options.out_dir / file);
  };
  const auto halt = [&](int iter, const Error& e) {
    restore(model, last_good);
    save("last_good.ckpt");
    result.diverged = true;
    result.message = "diverged at iteration " + std::to_string(iter) + ": " + e.what();
  };

  for (int iter = 1; iter <= schedule.max_iters; ++iter) {
    MetricsRow row;
    row.iter = iter;
    row.lr = opt.learning_rate();
    opt.zero_grad();
    try {
      for (int k = 0; k < schedule.batch_size; ++k) {
        if (cursor == order.size()) {
          std::shuffle(order.begin(), order.end(), order_rng);
          cursor = 0;
        }
        const ImagePair& pair = train_set[order[cursor++]];
        const LatentBundle bundle = forward(model, pair, QuantMode::kTrain, &noise);
        const LossBreakdown l = compute_loss(bundle, pair, model);
        const double share = 1.0 / schedule.batch_size;
        ad::backward(ad::scale(l.loss, share));
        row.rx += share * l.rx;
        row.ry += share * l.ry;
        row.rw += share * l.rw;
        row.dx += share * l.dx;
        row.dy += share * l.dy;
        row.loss += share * l.total;
      }
      for (const auto& [name, p] : model.parameters())
        for (double g : p.grad().values())
          if (!std::isfinite(g))
            fail(ErrorKind::kDiverged, "gradient of " + name + " is not finite");
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kDiverged) throw;
      halt(iter, e);
      break;
    }
    if (iter == 1) {
      for (const auto& [name, p] : model.parameters()) {
        double s = 0.0;
        for (double g : p.grad().values()) s += g * g;
        result.first_grad_norms[name] = std::sqrt(s);
      }
    }
    last_good = snapshot(model);
    opt.step();

    if (schedule.val_every > 0 && iter % schedule.val_every == 0 && !val_set.empty()) {
      ValidationResult v;
      try {
        v = validate_model(model, val_set);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::kDiverged) throw;
        halt(iter, e);
        break;
      }
      row.val_ms_ssim = v.ms_ssim;
      row.val_bpp = v.bpp;
      opt.set_learning_rate(plateau.observe(v.loss));
    }
    result.log.push_back(row);
    if (options.progress_every > 0 && iter % options.progress_every == 0)
      std::cerr << "iter " << iter << " loss " << row.loss << " bpp " << row.rx << " D_x "
                << row.dx << " lr " << row.lr << '\n';
    if (schedule.checkpoint_every > 0 && iter % schedule.checkpoint_every == 0)
      save("checkpoint_" + std::to_string(iter) + ".ckpt");
  }

  if (options.out_dir) {
    write_metrics_csv(*options.out_dir / "metrics.csv", result.log);
    if (!result.diverged) save("model.ckpt");
  }
  return result;
}

}  // namespace ndcc
