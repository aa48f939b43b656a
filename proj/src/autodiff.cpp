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

#include "ndcc/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "ndcc/error.hpp"

namespace ndcc::ad {
namespace {

thread_local bool g_grad_enabled = true;

void require_same_shape(const Var& a, const Var& b, const char* op) {
  check_shape(a.shape() == b.shape(),
              std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                  " vs " + shape_string(b.shape()));
}

void require_rank(const Var& a, int rank, const char* op) {
  check_shape(a.value().rank() == rank,
              std::string(op) + ": expected rank " + std::to_string(rank) +
                  ", got " + shape_string(a.shape()));
}

template <typename F>
Tensor map_unary(const Tensor& a, F f) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

// Columns of the strided convolution: rows (c, ky, kx), cols (oy, ox).
Tensor::RowMatrix im2col(const Tensor& x, int k, int stride, int pad, int out_h,
                         int out_w) {
  const int channels = x.dim(0), height = x.dim(1), width = x.dim(2);
  Tensor::RowMatrix cols = Tensor::RowMatrix::Zero(
      static_cast<Eigen::Index>(channels) * k * k,
      static_cast<Eigen::Index>(out_h) * out_w);
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* row = cols.row((c * k + ky) * k + kx).data();
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= height) continue;
          const double* src = x.data() + (static_cast<std::size_t>(c) * height + iy) * width;
          double* dst = row + static_cast<std::size_t>(oy) * out_w;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < width) dst[ox] = src[ix];
          }
        }
      }
    }
  }
  return cols;
}

void col2im_add(const Tensor::RowMatrix& cols, Tensor& x, int k, int stride,
                int pad, int out_h, int out_w) {
  const int channels = x.dim(0), height = x.dim(1), width = x.dim(2);
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* row = cols.row((c * k + ky) * k + kx).data();
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= height) continue;
          double* dst = x.data() + (static_cast<std::size_t>(c) * height + iy) * width;
          const double* src = row + static_cast<std::size_t>(oy) * out_w;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < width) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

int conv_out_dim(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

}  // namespace

void Var::accumulate(const Tensor& g) const {
  Tensor& buf = grad_buffer();
  check_shape(buf.shape() == g.shape(), "gradient shape mismatch " +
                                            shape_string(buf.shape()) + " vs " +
                                            shape_string(g.shape()));
  for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

Tensor& Var::grad_buffer() const {
  if (node_->grad.shape() != node_->value.shape())
    node_->grad = Tensor(node_->value.shape());
  return node_->grad;
}

void Var::zero_grad() const { node_->grad = Tensor(); }

Var constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return Var(std::move(n));
}

Var parameter(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  return Var(std::move(n));
}

Var make_op(Tensor value, const std::vector<Var>& inputs, BackwardFn fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  if (g_grad_enabled) {
    for (const Var& in : inputs) {
      if (in.requires_grad()) {
        n->requires_grad = true;
        break;
      }
    }
  }
  if (n->requires_grad) {
    n->inputs.reserve(inputs.size());
    for (const Var& in : inputs) n->inputs.push_back(in.shared());
    n->backward = std::move(fn);
  }
  return Var(std::move(n));
}

void backward(const Var& root) {
  check_arg(root.value().size() == 1, "backward needs a scalar root");
  if (!root.requires_grad()) return;
  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node(), 0}};
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second)
        stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  Var(root.shared()).grad_buffer().fill(1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && node->grad.shape() == node->value.shape())
      node->backward(node->value, node->grad);
  }
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return make_op(std::move(out), {a, b}, [a, b](const Tensor&, const Tensor& g) {
    if (a.requires_grad()) a.accumulate(g);
    if (b.requires_grad()) b.accumulate(g);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  return make_op(std::move(out), {a, b}, [a, b](const Tensor&, const Tensor& g) {
    if (a.requires_grad()) a.accumulate(g);
    if (b.requires_grad()) {
      Tensor& gb = b.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return make_op(std::move(out), {a, b}, [a, b](const Tensor&, const Tensor& g) {
    if (a.requires_grad()) {
      Tensor& ga = a.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b.value()[i];
    }
    if (b.requires_grad()) {
      Tensor& gb = b.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a.value()[i];
    }
  });
}

Var div(const Var& a, const Var& b) {
  require_same_shape(a, b, "div");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] / b.value()[i];
  return make_op(std::move(out), {a, b}, [a, b](const Tensor& y, const Tensor& g) {
    if (a.requires_grad()) {
      Tensor& ga = a.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / b.value()[i];
    }
    if (b.requires_grad()) {
      Tensor& gb = b.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i] * y[i] / b.value()[i];
    }
  });
}

Var add_scalar(const Var& a, double s) {
  Tensor out = map_unary(a.value(), [s](double v) { return v + s; });
  return make_op(std::move(out), {a},
                 [a](const Tensor&, const Tensor& g) { a.accumulate(g); });
}

Var scale(const Var& a, double s) {
  Tensor out = map_unary(a.value(), [s](double v) { return v * s; });
  return make_op(std::move(out), {a}, [a, s](const Tensor&, const Tensor& g) {
    Tensor& ga = a.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
  });
}

Var square(const Var& a) {
  Tensor out = map_unary(a.value(), [](double v) { return v * v; });
  return make_op(std::move(out), {a}, [a](const Tensor&, const Tensor& g) {
    Tensor& ga = a.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += 2.0 * g[i] * a.value()[i];
  });
}

Var sqrt(const Var& a) {
  Tensor out = map_unary(a.value(), [](double v) { return std::sqrt(v); });
  return make_op(std::move(out), {a}, [a](const Tensor& y, const Tensor& g) {
    Tensor& ga = a.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += 0.5 * g[i] / y[i];
  });
}

Var log(const Var& a) {
  Tensor out = map_unary(a.value(), [](double v) { return std::log(v); });
  return make_op(std::move(out), {a}, [a](const Tensor&, const Tensor& g) {
    Tensor& ga = a.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / a.value()[i];
  });
}

Var relu(const Var& a) {
  Tensor out = map_unary(a.value(), [](double v) { return v > 0.0 ? v : 0.0; });
  return make_op(std::move(out), {a}, [a](const Tensor&, const Tensor& g) {
    Tensor& ga = a.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (a.value()[i] > 0.0) ga[i] += g[i];
  });
}

Var softplus(const Var& a) {
  Tensor out = map_unary(a.value(), [](double v) {
    return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
  });
  return make_op(std::move(out), {a}, [a](const Tensor&, const Tensor& g) {
    Tensor& ga = a.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i)
      ga[i] += g[i] / (1.0 + std::exp(-a.value()[i]));
  });
}

Var pow_scalar(const Var& a, double p) {
  Tensor out = map_unary(a.value(),
                         [p](double v) { return v > 0.0 ? std::pow(v, p) : 0.0; });
  return make_op(std::move(out), {a}, [a, p](const Tensor& y, const Tensor& g) {
    Tensor& ga = a.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = a.value()[i];
      if (v > 0.0) ga[i] += g[i] * p * y[i] / v;
    }
  });
}

Var clamp(const Var& a, double lo, double hi) {
  Tensor out = map_unary(a.value(), [lo, hi](double v) { return std::clamp(v, lo, hi); });
  return make_op(std::move(out), {a}, [a, lo, hi](const Tensor&, const Tensor& g) {
    Tensor& ga = a.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = a.value()[i];
      if (v > lo && v < hi) ga[i] += g[i];
    }
  });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return make_op(Tensor::scalar(s), {a}, [a](const Tensor&, const Tensor& g) {
    Tensor& ga = a.grad_buffer();
    const double gv = g[0];
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gv;
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return make_op(Tensor::scalar(s / n), {a}, [a, n](const Tensor&, const Tensor& g) {
    Tensor& ga = a.grad_buffer();
    const double gv = g[0] / n;
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gv;
  });
}

Var mean_hw(const Var& a) {
  require_rank(a, 3, "mean_hw");
  const int channels = a.value().dim(0);
  const std::size_t plane = a.value().size() / static_cast<std::size_t>(channels);
  Tensor out({channels});
  for (int c = 0; c < channels; ++c) {
    double s = 0.0;
    const double* p = a.value().data() + c * plane;
    for (std::size_t i = 0; i < plane; ++i) s += p[i];
    out[c] = s / static_cast<double>(plane);
  }
  return make_op(std::move(out), {a}, [a, plane](const Tensor&, const Tensor& g) {
    Tensor& ga = a.grad_buffer();
    for (int c = 0; c < static_cast<int>(g.size()); ++c) {
      const double gv = g[c] / static_cast<double>(plane);
      double* p = ga.data() + c * plane;
      for (std::size_t i = 0; i < plane; ++i) p[i] += gv;
    }
  });
}

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return make_op(std::move(out), {a}, [a](const Tensor&, const Tensor& g) {
    Tensor& ga = a.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Var gather(const Var& a, std::shared_ptr<const std::vector<int>> index,
           Shape out_shape) {
  check_shape(index->size() == shape_size(out_shape),
              "gather: index length does not match output shape");
  Tensor out(std::move(out_shape));
  const Tensor& x = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[static_cast<std::size_t>((*index)[i])];
  return make_op(std::move(out), {a}, [a, index](const Tensor&, const Tensor& g) {
    Tensor& ga = a.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) ga[static_cast<std::size_t>((*index)[i])] += g[i];
  });
}

Var concat_channels(const std::vector<Var>& parts) {
  check_arg(!parts.empty(), "concat_channels: no inputs");
  const int height = parts[0].value().dim(1), width = parts[0].value().dim(2);
  int channels = 0;
  for (const Var& p : parts) {
    require_rank(p, 3, "concat_channels");
    check_shape(p.value().dim(1) == height && p.value().dim(2) == width,
                "concat_channels: spatial mismatch " + shape_string(p.shape()) +
                    " vs " + shape_string(parts[0].shape()));
    channels += p.value().dim(0);
  }
  Tensor out({channels, height, width});
  std::size_t offset = 0;
  for (const Var& p : parts) {
    std::copy(p.value().storage().begin(), p.value().storage().end(),
              out.storage().begin() + static_cast<std::ptrdiff_t>(offset));
    offset += p.value().size();
  }
  return make_op(std::move(out), parts, [parts](const Tensor&, const Tensor& g) {
    std::size_t off = 0;
    for (const Var& p : parts) {
      if (p.requires_grad()) {
        Tensor& gp = p.grad_buffer();
        for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[off + i];
      }
      off += p.value().size();
    }
  });
}

Var matmul(const Var& a, const Var& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  check_shape(a.value().dim(1) == b.value().dim(0),
              "matmul: inner dims " + shape_string(a.shape()) + " * " +
                  shape_string(b.shape()));
  Tensor out({a.value().dim(0), b.value().dim(1)});
  out.matrix().noalias() = a.value().matrix() * b.value().matrix();
  return make_op(std::move(out), {a, b}, [a, b](const Tensor&, const Tensor& g) {
    if (a.requires_grad())
      a.grad_buffer().matrix().noalias() += g.matrix() * b.value().matrix().transpose();
    if (b.requires_grad())
      b.grad_buffer().matrix().noalias() += a.value().matrix().transpose() * g.matrix();
  });
}

Var transpose(const Var& a) {
  require_rank(a, 2, "transpose");
  Tensor out({a.value().dim(1), a.value().dim(0)});
  out.matrix() = a.value().matrix().transpose();
  return make_op(std::move(out), {a}, [a](const Tensor&, const Tensor& g) {
    a.grad_buffer().matrix() += g.matrix().transpose();
  });
}

Var softmax_rows(const Var& a) {
  require_rank(a, 2, "softmax_rows");
  const int rows = a.value().dim(0), cols = a.value().dim(1);
  Tensor out(a.shape());
  for (int r = 0; r < rows; ++r) {
    const double* x = a.value().data() + static_cast<std::size_t>(r) * cols;
    double* y = out.data() + static_cast<std::size_t>(r) * cols;
    const double m = *std::max_element(x, x + cols);
    double s = 0.0;
    for (int c = 0; c < cols; ++c) s += (y[c] = std::exp(x[c] - m));
    for (int c = 0; c < cols; ++c) y[c] /= s;
  }
  return make_op(std::move(out), {a}, [a, rows, cols](const Tensor& y, const Tensor& g) {
    Tensor& ga = a.grad_buffer();
    for (int r = 0; r < rows; ++r) {
      const std::size_t base = static_cast<std::size_t>(r) * cols;
      double dot = 0.0;
      for (int c = 0; c < cols; ++c) dot += g[base + c] * y[base + c];
      for (int c = 0; c < cols; ++c) ga[base + c] += y[base + c] * (g[base + c] - dot);
    }
  });
}

Var slice_cols(const Var& a, int begin, int count) {
  require_rank(a, 2, "slice_cols");
  check_shape(begin >= 0 && count >= 0 && begin + count <= a.value().dim(1),
              "slice_cols: range out of bounds");
  Tensor out({a.value().dim(0), count});
  out.matrix() = a.value().matrix().middleCols(begin, count);
  return make_op(std::move(out), {a}, [a, begin, count](const Tensor&, const Tensor& g) {
    a.grad_buffer().matrix().middleCols(begin, count) += g.matrix();
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  check_arg(!parts.empty(), "concat_cols: no inputs");
  const int rows = parts[0].value().dim(0);
  int cols = 0;
  for (const Var& p : parts) {
    require_rank(p, 2, "concat_cols");
    check_shape(p.value().dim(0) == rows, "concat_cols: row mismatch");
    cols += p.value().dim(1);
  }
  Tensor out({rows, cols});
  int offset = 0;
  for (const Var& p : parts) {
    out.matrix().middleCols(offset, p.value().dim(1)) = p.value().matrix();
    offset += p.value().dim(1);
  }
  return make_op(std::move(out), parts, [parts](const Tensor&, const Tensor& g) {
    int off = 0;
    for (const Var& p : parts) {
      const int c = p.value().dim(1);
      if (p.requires_grad()) p.grad_buffer().matrix() += g.matrix().middleCols(off, c);
      off += c;
    }
  });
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad) {
  require_rank(x, 3, "conv2d");
  require_rank(weight, 4, "conv2d weight");
  const Tensor& w = weight.value();
  const int out_ch = w.dim(0), in_ch = w.dim(1), k = w.dim(2);
  check_shape(x.value().dim(0) == in_ch,
              "conv2d: input has " + std::to_string(x.value().dim(0)) +
                  " channels, weight expects " + std::to_string(in_ch));
  check_shape(bias.value().size() == static_cast<std::size_t>(out_ch),
              "conv2d: bias length");
  const int out_h = conv_out_dim(x.value().dim(1), k, stride, pad);
  const int out_w = conv_out_dim(x.value().dim(2), k, stride, pad);
  auto cols = std::make_shared<Tensor::RowMatrix>(
      im2col(x.value(), k, stride, pad, out_h, out_w));
  Tensor out({out_ch, out_h, out_w});
  auto om = out.matrix();
  om.noalias() = w.matrix() * (*cols);
  for (int c = 0; c < out_ch; ++c) om.row(c).array() += bias.value()[c];
  return make_op(std::move(out), {x, weight, bias},
                 [x, weight, bias, cols, k, stride, pad, out_h, out_w](
                     const Tensor&, const Tensor& g) {
                   const auto gm = g.matrix();
                   if (weight.requires_grad())
                     weight.grad_buffer().matrix().noalias() += gm * cols->transpose();
                   if (bias.requires_grad()) {
                     Tensor& gb = bias.grad_buffer();
                     for (int c = 0; c < g.dim(0); ++c) gb[c] += gm.row(c).sum();
                   }
                   if (x.requires_grad()) {
                     Tensor::RowMatrix dcols =
                         weight.value().matrix().transpose() * gm;
                     col2im_add(dcols, x.grad_buffer(), k, stride, pad, out_h, out_w);
                   }
                 });
}

Var conv_transpose2d(const Var& x, const Var& weight, const Var& bias, int stride,
                     int pad, int out_h, int out_w) {
  require_rank(x, 3, "conv_transpose2d");
  require_rank(weight, 4, "conv_transpose2d weight");
  const Tensor& w = weight.value();
  const int in_ch = w.dim(0), out_ch = w.dim(1), k = w.dim(2);
  check_shape(x.value().dim(0) == in_ch,
              "conv_transpose2d: input has " + std::to_string(x.value().dim(0)) +
                  " channels, weight expects " + std::to_string(in_ch));
  check_shape(conv_out_dim(out_h, k, stride, pad) == x.value().dim(1) &&
                  conv_out_dim(out_w, k, stride, pad) == x.value().dim(2),
              "conv_transpose2d: output size inconsistent with input");
  const int in_h = x.value().dim(1), in_w = x.value().dim(2);
  // Weight viewed as in_ch x (out_ch*k*k).
  Tensor::RowMatrix cols = w.matrix().transpose() * x.value().matrix();
  Tensor out({out_ch, out_h, out_w});
  col2im_add(cols, out, k, stride, pad, in_h, in_w);
  auto om = out.matrix();
  for (int c = 0; c < out_ch; ++c) om.row(c).array() += bias.value()[c];
  return make_op(std::move(out), {x, weight, bias},
                 [x, weight, bias, k, stride, pad, in_h, in_w](const Tensor&,
                                                               const Tensor& g) {
                   const Tensor::RowMatrix dcols = im2col(g, k, stride, pad, in_h, in_w);
                   if (weight.requires_grad())
                     weight.grad_buffer().matrix().noalias() +=
                         x.value().matrix() * dcols.transpose();
                   if (bias.requires_grad()) {
                     Tensor& gb = bias.grad_buffer();
                     const auto gm = g.matrix();
                     for (int c = 0; c < g.dim(0); ++c) gb[c] += gm.row(c).sum();
                   }
                   if (x.requires_grad())
                     x.grad_buffer().matrix().noalias() += weight.value().matrix() * dcols;
                 });
}

Var gdn(const Var& x, const Var& beta, const Var& gamma, bool inverse) {
  require_rank(x, 3, "gdn");
  const int channels = x.value().dim(0);
  check_shape(beta.value().size() == static_cast<std::size_t>(channels) &&
                  gamma.value().rank() == 2 && gamma.value().dim(0) == channels &&
                  gamma.value().dim(1) == channels,
              "gdn: parameters do not match " + std::to_string(channels) +
                  " input channels");
  const auto xm = x.value().matrix();
  const Eigen::Map<const Eigen::VectorXd> b(beta.value().data(), channels);
  auto norm = std::make_shared<Tensor::RowMatrix>(gamma.value().matrix() *
                                                  xm.array().square().matrix());
  norm->colwise() += b;
  Tensor out(x.shape());
  if (inverse)
    out.matrix().array() = xm.array() * norm->array().sqrt();
  else
    out.matrix().array() = xm.array() * norm->array().rsqrt();
  return make_op(std::move(out), {x, beta, gamma},
                 [x, beta, gamma, norm, inverse](const Tensor&, const Tensor& g) {
                   const auto gm = g.matrix();
                   const auto xm = x.value().matrix();
                   // t = g * x * n^{-3/2} (forward) or g * x * n^{-1/2} (inverse).
                   Tensor::RowMatrix t;
                   double sign;
                   if (inverse) {
                     t = (gm.array() * xm.array() * norm->array().rsqrt()).matrix();
                     sign = 0.5;
                   } else {
                     t = (gm.array() * xm.array() * norm->array().pow(-1.5)).matrix();
                     sign = -0.5;
                   }
                   if (x.requires_grad()) {
                     Tensor::RowMatrix cross = gamma.value().matrix().transpose() * t;
                     auto gx = x.grad_buffer().matrix();
                     if (inverse)
                       gx.array() += gm.array() * norm->array().sqrt() +
                                     xm.array() * cross.array();
                     else
                       gx.array() += gm.array() * norm->array().rsqrt() -
                                     xm.array() * cross.array();
                   }
                   if (beta.requires_grad()) {
                     Tensor& gb = beta.grad_buffer();
                     for (int c = 0; c < t.rows(); ++c) gb[c] += sign * t.row(c).sum();
                   }
                   if (gamma.requires_grad())
                     gamma.grad_buffer().matrix().noalias() +=
                         sign * t * xm.array().square().matrix().transpose();
                 });
}

Var blur_valid(const Var& x, const std::vector<double>& taps) {
  require_rank(x, 3, "blur_valid");
  const int channels = x.value().dim(0), height = x.value().dim(1),
            width = x.value().dim(2);
  const int k = static_cast<int>(taps.size());
  check_shape(height >= k && width >= k, "blur_valid: input smaller than window");
  const int out_h = height - k + 1, out_w = width - k + 1;
  Tensor horiz({channels, height, out_w});
  for (int c = 0; c < channels; ++c)
    for (int y = 0; y < height; ++y)
      for (int ox = 0; ox < out_w; ++ox) {
        double s = 0.0;
        for (int t = 0; t < k; ++t) s += taps[t] * x.value().at(c, y, ox + t);
        horiz.at(c, y, ox) = s;
      }
  Tensor out({channels, out_h, out_w});
  for (int c = 0; c < channels; ++c)
    for (int oy = 0; oy < out_h; ++oy)
      for (int ox = 0; ox < out_w; ++ox) {
        double s = 0.0;
        for (int t = 0; t < k; ++t) s += taps[t] * horiz.at(c, oy + t, ox);
        out.at(c, oy, ox) = s;
      }
  return make_op(std::move(out), {x}, [x, taps](const Tensor&, const Tensor& g) {
    const int channels = g.dim(0), out_h = g.dim(1), out_w = g.dim(2);
    const int k = static_cast<int>(taps.size());
    const int height = out_h + k - 1;
    Tensor dh({channels, height, out_w});
    for (int c = 0; c < channels; ++c)
      for (int oy = 0; oy < out_h; ++oy)
        for (int t = 0; t < k; ++t)
          for (int ox = 0; ox < out_w; ++ox)
            dh.at(c, oy + t, ox) += taps[t] * g.at(c, oy, ox);
    Tensor& gx = x.grad_buffer();
    for (int c = 0; c < channels; ++c)
      for (int y = 0; y < height; ++y)
        for (int ox = 0; ox < out_w; ++ox)
          for (int t = 0; t < k; ++t) gx.at(c, y, ox + t) += taps[t] * dh.at(c, y, ox);
  });
}

Var avgpool2(const Var& x) {
  require_rank(x, 3, "avgpool2");
  const int channels = x.value().dim(0);
  const int out_h = x.value().dim(1) / 2, out_w = x.value().dim(2) / 2;
  Tensor out({channels, out_h, out_w});
  const Tensor& v = x.value();
  for (int c = 0; c < channels; ++c)
    for (int y = 0; y < out_h; ++y)
      for (int xx = 0; xx < out_w; ++xx)
        out.at(c, y, xx) = 0.25 * (v.at(c, 2 * y, 2 * xx) + v.at(c, 2 * y, 2 * xx + 1) +
                                   v.at(c, 2 * y + 1, 2 * xx) +
                                   v.at(c, 2 * y + 1, 2 * xx + 1));
  return make_op(std::move(out), {x}, [x](const Tensor&, const Tensor& g) {
    Tensor& gx = x.grad_buffer();
    for (int c = 0; c < g.dim(0); ++c)
      for (int y = 0; y < g.dim(1); ++y)
        for (int xx = 0; xx < g.dim(2); ++xx) {
          const double q = 0.25 * g.at(c, y, xx);
          gx.at(c, 2 * y, 2 * xx) += q;
          gx.at(c, 2 * y, 2 * xx + 1) += q;
          gx.at(c, 2 * y + 1, 2 * xx) += q;
          gx.at(c, 2 * y + 1, 2 * xx + 1) += q;
        }
  });
}

}  // namespace ndcc::ad
