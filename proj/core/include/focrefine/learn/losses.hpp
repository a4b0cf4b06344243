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

#include <vector>

#include "focrefine/numerics/ops.hpp"

namespace focrefine::learn {

inline constexpr double kFocalGamma = 2.0;
inline constexpr double kPtlWeight = 0.1;

/// Normalized focal loss over a logit map against a {0, 1} target of the same
/// shape: sum((1 - p_t)^gamma * -log p_t) / sum((1 - p_t)^gamma). Gradients
/// flow through the focal weights as well.
Tensor nfl_loss(const Tensor& logits, const Tensor& target, double gamma = kFocalGamma);

struct PtlPoint {
  double x = 0.0;  // column, in the probability map's pixel coordinates
  double y = 0.0;  // row
  int z = 0;       // click label: 1 positive, 0 negative
};

/// sum_i (M(x_i, y_i) - z_i)^2 with M sampled bilinearly.
Tensor ptl_loss(const Tensor& probs, const std::vector<PtlPoint>& points);

/// Maps a model-input click to the pixel coordinates of an [L, L] map over an
/// input of side S (half-pixel centres).
PtlPoint to_map_coords(int x, int y, bool positive, int input_size, int map_size);

}  // namespace focrefine::learn
