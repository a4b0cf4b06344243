// Copyright 2026 The focrefine Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <vector>

#include "focrefine/numerics/tensor.hpp"
#include "focrefine/samlite/model.hpp"

namespace focrefine {

/// Interleaved 8-bit RGB.
struct RgbImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;

  RgbImage() = default;
  RgbImage(int h, int w) : height(h), width(w), data(static_cast<std::size_t>(h) * w * 3, 0) {}
  std::uint8_t& at(int y, int x, int c) { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  std::uint8_t at(int y, int x, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

/// Row-major binary mask with values 0 / 1.
struct BinaryMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;

  BinaryMask() = default;
  BinaryMask(int h, int w) : height(h), width(w), data(static_cast<std::size_t>(h) * w, 0) {}
  std::uint8_t& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
  std::size_t count() const;
  bool empty_mask() const { return count() == 0; }
  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;
};

namespace samlite {

/// Geometry of the resize-longest-side-then-pad mapping into the model input.
struct InputFrame {
  int orig_h = 0;
  int orig_w = 0;
  int input_size = 0;
  double scale = 1.0;  // model pixels per original pixel

  Click to_model(int x, int y, bool positive) const;
};

struct Preprocessed {
  Tensor image;  // [input_size, input_size, 3], normalized
  InputFrame frame;
};

/// Resizes the longest side to input_size (bilinear), pads bottom/right with
/// zeros and normalizes to roughly zero mean, unit spread.
Preprocessed preprocess(const RgbImage& img, int input_size);

/// Bilinear resampling of [L, L] logits back to the original image frame.
Tensor logits_to_original(const Tensor& logits, const InputFrame& frame);

/// Binarize at logit > 0.
BinaryMask binarize(const Tensor& logits);

/// Nearest-cell average of a mask onto an n x n grid (>= 0.5 is foreground),
/// used to bring ground truth to logits resolution.
Tensor downsample_mask(const BinaryMask& m, int n);

}  // namespace samlite

}  // namespace focrefine
