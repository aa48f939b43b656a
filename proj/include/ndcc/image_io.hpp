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

#include "ndcc/tensor.hpp"

namespace ndcc {

// 8-bit PNG <-> (3, H, W) tensor in [0, 1]. Gray and alpha inputs are
// converted to RGB.
Tensor read_png(const std::filesystem::path& path);
// Writes a 3-channel tensor as RGB or a 1-channel tensor as grayscale;
// values are clamped to [0, 1] and rounded to 8 bits.
void write_png(const std::filesystem::path& path, const Tensor& image);

// Rounds to the 8-bit grid a PNG round trip would produce.
Tensor quantize_to_8bit(const Tensor& image);

}  // namespace ndcc
