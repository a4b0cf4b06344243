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

#include "focrefine/numerics/tensor.hpp"

namespace focrefine::learn {

/// P(i) proportional to gamma^(i-1), i = 1..n_max, normalized.
std::vector<double> decay_probabilities(double gamma, int n_max);

/// Number of clicks for one training episode, in [1, n_max].
int sample_click_count(double gamma, int n_max, Rng& rng);

/// Refine step K in [1, n] with P(K) proportional to gamma_r^(K-1).
int sample_refine_step(double gamma_r, int n, Rng& rng);

}  // namespace focrefine::learn
