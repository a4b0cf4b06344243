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
#include <optional>
#include <utility>
#include <vector>

#include "focrefine/numerics/tensor.hpp"

namespace focrefine::dwin {

// Patch grids are Tensors of shape [h, w, C].

struct Shift {
  int dy = 0;
  int dx = 0;
  friend bool operator==(const Shift&, const Shift&) = default;
};

// Half-window cyclic shift used by shift blocks.
inline Shift half_shift(int S) { return {S / 2, S / 2}; }

struct WindowIndex {
  int row = 0;
  int col = 0;
  friend bool operator==(const WindowIndex&, const WindowIndex&) = default;
  friend auto operator<=>(const WindowIndex&, const WindowIndex&) = default;
};

/// Inclusive patch (or pixel) coordinates.
struct BBox {
  int x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  friend bool operator==(const BBox&, const BBox&) = default;
  int width() const { return x2 - x1 + 1; }
  int height() const { return y2 - y1 + 1; }
};

/// Windows cut from a grid after a cyclic shift and bottom/right zero padding.
struct WindowSet {
  int S = 0;
  Shift shift;
  std::int64_t h = 0, w = 0;  // unpadded grid size
  std::vector<WindowIndex> index;
  std::vector<Tensor> windows;  // each [S, S, C], aligned with index

  int rows() const { return static_cast<int>((h + S - 1) / S); }
  int cols() const { return static_cast<int>((w + S - 1) / S); }
};

/// Number of windows along each axis of the padded grid.
std::pair<int, int> window_grid(std::int64_t h, std::int64_t w, int S);

/// Flat grid rows (r * w + c) covered by one window; -1 marks padding.
std::vector<std::int64_t> window_rows(std::int64_t h, std::int64_t w, int S, Shift shift, WindowIndex win);

/// Every window of F in row-major window order.
WindowSet partition_windows(const Tensor& F, int S, Shift shift = {});

/// The listed windows of F.
WindowSet gather_windows(const Tensor& F, int S, Shift shift, const std::vector<WindowIndex>& index);

/// Inverse of partition_windows; ws must cover the full padded grid.
Tensor merge_windows(const WindowSet& ws, std::int64_t h, std::int64_t w);

/// F with the footprints of ws replaced by its windows; every other
/// position is copied bit-exactly.
Tensor scatter_selected(const Tensor& F, const WindowSet& ws);

/// Tight box over positions of M ([h, w] or [h, w, 1]) strictly above threshold.
std::optional<BBox> mask_bbox(const Tensor& M, double threshold = 0.0);

/// Max-pool a [H, W] map over stride x stride cells (partial edge cells kept).
Tensor downsample_max(const Tensor& M, int stride);

/// Grows a box about its center by `factor` and clips it to the grid.
BBox expand_bbox(const BBox& b, double factor, std::int64_t h, std::int64_t w);

/// Windows whose footprint (in shifted, padded coordinates) contains at least
/// one grid position inside bbox. Row-major order.
std::vector<WindowIndex> select_windows(const std::optional<BBox>& bbox, std::int64_t h, std::int64_t w, int S,
                                        Shift shift = {});

/// Image-level zoom-in: crop [H, W, C] image to the inclusive pixel box and
/// resize bilinearly (half-pixel centers) to out_h x out_w.
Tensor zoomin_crop_baseline(const Tensor& image, const BBox& bbox_pixels, int out_h, int out_w);

}  // namespace focrefine::dwin
