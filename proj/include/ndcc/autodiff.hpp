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

#include <functional>
#include <memory>
#include <vector>

#include "ndcc/tensor.hpp"

// Minimal reverse-mode automatic differentiation over dense tensors.
//
// Every op evaluates eagerly and, when gradients are enabled and at least one
// input requires them, records a closure that accumulates input gradients
// from the output gradient. Graphs are freed when the last Var referencing
// the root goes away.
namespace ndcc::ad {

struct Node;

// Receives the op's output value and the gradient flowing into it.
using BackwardFn = std::function<void(const Tensor& out, const Tensor& grad)>;

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool defined() const { return node_ != nullptr; }
  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& shared() const { return node_; }

  // Adds g to this variable's gradient buffer (allocating it on first use).
  void accumulate(const Tensor& g) const;
  Tensor& grad_buffer() const;
  // Releases the buffer; an empty grad() reads as zero.
  void zero_grad() const;

 private:
  std::shared_ptr<Node> node_;
};

Var constant(Tensor value);
Var parameter(Tensor value);

// Builds an op node. `fn` is dropped when gradients are disabled or no input
// requires them.
Var make_op(Tensor value, const std::vector<Var>& inputs, BackwardFn fn);

// Seeds d(root)/d(root) = 1 and propagates to every reachable node.
void backward(const Var& root);

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Elementwise, same shapes.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var add_scalar(const Var& a, double s);
Var scale(const Var& a, double s);
Var square(const Var& a);
Var sqrt(const Var& a);
Var log(const Var& a);
Var relu(const Var& a);
Var softplus(const Var& a);
// x^p for x > 0; zero value and gradient for x <= 0.
Var pow_scalar(const Var& a, double p);
Var clamp(const Var& a, double lo, double hi);

// Reductions.
Var sum(const Var& a);
Var mean(const Var& a);
// (C, H, W) -> (C): spatial mean per channel.
Var mean_hw(const Var& a);

Var reshape(const Var& a, Shape shape);
// out.flat[i] = a.flat[index[i]].
Var gather(const Var& a, std::shared_ptr<const std::vector<int>> index,
           Shape out_shape);
// Concatenates (C_i, H, W) tensors along channels.
Var concat_channels(const std::vector<Var>& parts);

// Matrices.
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var softmax_rows(const Var& a);
Var slice_cols(const Var& a, int begin, int count);
Var concat_cols(const std::vector<Var>& parts);

// Convolutions on (C, H, W). Weights: conv (Cout, Cin, k, k); transposed
// conv (Cin, Cout, k, k). The transposed conv is the exact adjoint of the
// strided conv that maps (Cout, out_h, out_w) to the input's spatial dims.
Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride,
           int pad);
Var conv_transpose2d(const Var& x, const Var& weight, const Var& bias,
                     int stride, int pad, int out_h, int out_w);

// Generalized divisive normalization at every spatial location:
// forward  y_i = x_i / sqrt(beta_i + sum_j gamma_ij x_j^2)
// inverse  y_i = x_i * sqrt(beta_i + sum_j gamma_ij x_j^2)
Var gdn(const Var& x, const Var& beta, const Var& gamma, bool inverse);

// Separable "valid" filtering of each channel with the same 1-D kernel.
Var blur_valid(const Var& x, const std::vector<double>& taps);
// 2x2 average pooling; odd trailing rows/cols are dropped.
Var avgpool2(const Var& x);

}  // namespace ndcc::ad
