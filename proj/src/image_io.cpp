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

#include "ndcc/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "ndcc/error.hpp"

namespace ndcc {
namespace {

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

Tensor read_png(const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str()))
    fail(ErrorKind::kIo, "cannot read image " + path.string() + ": " + image.message);
  image.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    png_image_free(&image);
    fail(ErrorKind::kIo, "cannot decode image " + path.string() + ": " + image.message);
  }
  const int height = static_cast<int>(image.height), width = static_cast<int>(image.width);
  Tensor out({3, height, width});
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < 3; ++c)
        out.at(c, y, x) = buffer[(static_cast<std::size_t>(y) * width + x) * 3 + c] / 255.0;
  return out;
}

void write_png(const std::filesystem::path& path, const Tensor& img) {
  check_shape(img.rank() == 3 && (img.dim(0) == 3 || img.dim(0) == 1),
              "write_png needs a (3, H, W) or (1, H, W) tensor, got " +
                  shape_string(img.shape()));
  const int channels = img.dim(0), height = img.dim(1), width = img.dim(2);
  std::vector<std::uint8_t> buffer(static_cast<std::size_t>(channels) * height * width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < channels; ++c)
        buffer[(static_cast<std::size_t>(y) * width + x) * channels + c] =
            to_byte(img.at(c, y, x));
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, buffer.data(), 0, nullptr))
    fail(ErrorKind::kIo, "cannot write image " + path.string() + ": " + image.message);
}

Tensor quantize_to_8bit(const Tensor& image) {
  Tensor out(image.shape());
  for (std::size_t i = 0; i < image.size(); ++i) out[i] = to_byte(image[i]) / 255.0;
  return out;
}

}  // namespace ndcc
