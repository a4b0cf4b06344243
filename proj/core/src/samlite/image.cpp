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

#include "focrefine/samlite/image.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace focrefine {

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count_if(data.begin(), data.end(), [](std::uint8_t v) { return v != 0; }));
}

namespace samlite {

namespace {

constexpr double kPixelMean = 0.5;
constexpr double kPixelStd = 0.25;

// Half-pixel-centred bilinear lookup with edge clamping.
struct Interp {
  int i0, i1;
  double t;
};

Interp interp(double src, int n) {
  src = std::clamp(src, 0.0, static_cast<double>(n - 1));
  const int i0 = static_cast<int>(std::floor(src));
  const int i1 = std::min(i0 + 1, n - 1);
  return {i0, i1, src - i0};
}

}  // namespace

Click InputFrame::to_model(int x, int y, bool positive) const {
  if (x < 0 || y < 0 || x >= orig_w || y >= orig_h) {
    throw std::out_of_range("click (" + std::to_string(x) + ", " + std::to_string(y) + ") outside the " +
                            std::to_string(orig_w) + "x" + std::to_string(orig_h) + " image");
  }
  const int mx = std::clamp(static_cast<int>(std::floor((x + 0.5) * scale)), 0, input_size - 1);
  const int my = std::clamp(static_cast<int>(std::floor((y + 0.5) * scale)), 0, input_size - 1);
  return {mx, my, positive};
}

Preprocessed preprocess(const RgbImage& img, int input_size) {
  if (img.height < 1 || img.width < 1 || img.data.size() != static_cast<std::size_t>(img.height) * img.width * 3) {
    throw std::invalid_argument("preprocess: malformed RGB image");
  }
  InputFrame fr{img.height, img.width, input_size,
                static_cast<double>(input_size) / std::max(img.height, img.width)};
  const int nh = std::clamp(static_cast<int>(std::lround(img.height * fr.scale)), 1, input_size);
  const int nw = std::clamp(static_cast<int>(std::lround(img.width * fr.scale)), 1, input_size);
  std::vector<double> out(static_cast<std::size_t>(input_size) * input_size * 3, 0.0);
  const bool same = nh == img.height && nw == img.width;
  for (int y = 0; y < nh; ++y) {
    const Interp iy = interp((y + 0.5) / fr.scale - 0.5, img.height);
    for (int x = 0; x < nw; ++x) {
      const Interp ix = interp((x + 0.5) / fr.scale - 0.5, img.width);
      for (int c = 0; c < 3; ++c) {
        double v;
        if (same) {
          v = img.at(y, x, c);
        } else {
          v = (1 - iy.t) * ((1 - ix.t) * img.at(iy.i0, ix.i0, c) + ix.t * img.at(iy.i0, ix.i1, c)) +
              iy.t * ((1 - ix.t) * img.at(iy.i1, ix.i0, c) + ix.t * img.at(iy.i1, ix.i1, c));
        }
        out[(static_cast<std::size_t>(y) * input_size + x) * 3 + c] = (v / 255.0 - kPixelMean) / kPixelStd;
      }
    }
  }
  return {Tensor({input_size, input_size, 3}, std::move(out)), fr};
}

Tensor logits_to_original(const Tensor& logits, const InputFrame& frame) {
  if (logits.rank() != 2 || logits.dim(0) != logits.dim(1)) {
    throw std::invalid_argument("logits_to_original expects square [L, L] logits");
  }
  const int L = static_cast<int>(logits.dim(0));
  const double to_logit = static_cast<double>(L) / frame.input_size;
  const auto v = logits.data();
  std::vector<double> out(static_cast<std::size_t>(frame.orig_h) * frame.orig_w);
  for (int y = 0; y < frame.orig_h; ++y) {
    const Interp iy = interp((y + 0.5) * frame.scale * to_logit - 0.5, L);
    for (int x = 0; x < frame.orig_w; ++x) {
      const Interp ix = interp((x + 0.5) * frame.scale * to_logit - 0.5, L);
      out[static_cast<std::size_t>(y) * frame.orig_w + x] =
          (1 - iy.t) * ((1 - ix.t) * v[iy.i0 * L + ix.i0] + ix.t * v[iy.i0 * L + ix.i1]) +
          iy.t * ((1 - ix.t) * v[iy.i1 * L + ix.i0] + ix.t * v[iy.i1 * L + ix.i1]);
    }
  }
  return Tensor({frame.orig_h, frame.orig_w}, std::move(out));
}

BinaryMask binarize(const Tensor& logits) {
  if (logits.rank() != 2) throw std::invalid_argument("binarize expects a 2-d map");
  BinaryMask m(static_cast<int>(logits.dim(0)), static_cast<int>(logits.dim(1)));
  const auto v = logits.data();
  for (std::size_t i = 0; i < v.size(); ++i) m.data[i] = v[i] > 0.0 ? 1 : 0;
  return m;
}

Tensor downsample_mask(const BinaryMask& m, int n) {
  if (n < 1 || m.height < 1 || m.width < 1) throw std::invalid_argument("downsample_mask: bad size");
  std::vector<double> out(static_cast<std::size_t>(n) * n);
  for (int i = 0; i < n; ++i) {
    const int y0 = i * m.height / n, y1 = std::max(y0 + 1, (i + 1) * m.height / n);
    for (int j = 0; j < n; ++j) {
      const int x0 = j * m.width / n, x1 = std::max(x0 + 1, (j + 1) * m.width / n);
      int on = 0;
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) on += m.at(y, x) != 0;
      out[static_cast<std::size_t>(i) * n + j] = 2 * on >= (y1 - y0) * (x1 - x0) ? 1.0 : 0.0;
    }
  }
  return Tensor({n, n}, std::move(out));
}

}  // namespace samlite

}  // namespace focrefine
