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

#include "ndcc/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "ndcc/error.hpp"

namespace ndcc {

const char* error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidArgument: return "invalid_argument";
    case ErrorKind::kShape: return "shape";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kHashMismatch: return "hash_mismatch";
    case ErrorKind::kCorruptStream: return "corrupt_stream";
    case ErrorKind::kDiverged: return "diverged";
  }
  return "unknown";
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    check_shape(d >= 0, "negative dimension in " + shape_string(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(data_.size() == shape_size(shape_),
              "data length does not match shape " + shape_string(shape_));
}

Tensor::MatrixMap Tensor::matrix() {
  check_shape(rank() >= 2,
              "matrix view needs rank >= 2, got " + shape_string(shape_));
  const int rows = shape_[0];
  const int cols = rows == 0 ? 0 : static_cast<int>(data_.size() / rows);
  return MatrixMap(data_.data(), rows, cols);
}

Tensor::ConstMatrixMap Tensor::matrix() const {
  check_shape(rank() >= 2,
              "matrix view needs rank >= 2, got " + shape_string(shape_));
  const int rows = shape_[0];
  const int cols = rows == 0 ? 0 : static_cast<int>(data_.size() / rows);
  return ConstMatrixMap(data_.data(), rows, cols);
}

Tensor Tensor::reshaped(Shape shape) const {
  check_shape(shape_size(shape) == data_.size(),
              "cannot reshape " + shape_string(shape_) + " to " +
                  shape_string(shape));
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::identical(const Tensor& other) const {
  return shape_ == other.shape_ &&
         (data_.empty() ||
          std::memcmp(data_.data(), other.data_.data(),
                      data_.size() * sizeof(double)) == 0);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  check_shape(a.shape() == b.shape(), "max_abs_diff shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace ndcc
