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
#include <string>
#include <vector>

#include "focrefine/samlite/image.hpp"

namespace focrefine::interact {

enum class OracleMode { kCenter, kRandom };

OracleMode oracle_mode_from_string(const std::string& s);
std::string to_string(OracleMode m);

/// Squared Euclidean distance from every pixel of `set` to the nearest pixel
/// outside it, with everything beyond the border counting as outside.
/// Pixels not in the set get 0.
std::vector<double> squared_distance_to_boundary(const BinaryMask& set);

/// 4-connected component labels (0 = background, 1.. in row-major order of
/// first appearance).
std::vector<int> connected_components(const BinaryMask& m, int* count = nullptr);

struct OracleClick {
  Click click;            // original-image pixel coordinates
  double distance = 0.0;  // distance to the error-region boundary (center mode)
};

/// Next click from the error between pred and gt, or nullopt when they agree.
/// Center mode: deepest point of the error regions, ties to the smallest
/// (row, col). Random mode: uniform over all error pixels. Label is positive
/// iff the point is a false negative.
std::optional<OracleClick> next_click(const BinaryMask& pred, const BinaryMask& gt, OracleMode mode, Rng& rng);

}  // namespace focrefine::interact
