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

#include <string>
#include <utility>
#include <vector>

#include "focrefine/numerics/layers.hpp"

namespace focrefine::pdyrelu {

/// y = max_k (a_k * x + b_k), elementwise; coefficients broadcast to x.
/// Ties route the gradient to the earliest branch.
Tensor dyrelu_reference(const Tensor& x, const std::vector<std::pair<Tensor, Tensor>>& coeffs);

/// Four coefficient grids, each the shape of the activated tensor [S, S, C].
struct Coefficients {
  Tensor a0, b0, a1, b1;
};

/// a0 = b0 = per-pixel similarity f_hat . q_f replicated across channels;
/// a1 = b1 = channel means of f_hat replicated across positions.
Coefficients hyper_coefficients(const Tensor& f_hat, const Tensor& q_f);

/// Four independent channel-wise two-layer MLPs (C -> C relu -> C).
struct Params {
  MlpParams a0, b0, a1, b1;

  static Params make(ParameterSet& ps, const std::string& name, std::int64_t channels, Rng& rng);
};

Coefficients coefficient_mlps(const Coefficients& raw, const Params& params);

/// max(a0 * f_hat + b0, a1 * f_hat + b1) with MLP-transformed coefficients.
Tensor pdyrelu_apply(const Tensor& f_hat, const Tensor& q_f, const Params& params);

}  // namespace focrefine::pdyrelu
