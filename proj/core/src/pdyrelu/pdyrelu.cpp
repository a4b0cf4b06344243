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

#include "focrefine/pdyrelu/pdyrelu.hpp"

#include <stdexcept>

namespace focrefine::pdyrelu {

namespace {

void check_pair(const Tensor& f_hat, const Tensor& q_f) {
  if (f_hat.rank() != 3) throw std::invalid_argument("P-DyReLU input must be [S, S, C], got " + shape_str(f_hat.shape()));
  if (q_f.shape() != Shape{1, f_hat.dim(2)}) {
    throw std::invalid_argument("P-DyReLU query " + shape_str(q_f.shape()) + " does not match channels of " +
                                shape_str(f_hat.shape()));
  }
}

Tensor rows_of(const Tensor& grid) { return reshape(grid, {grid.dim(0) * grid.dim(1), grid.dim(2)}); }

}  // namespace

Tensor dyrelu_reference(const Tensor& x, const std::vector<std::pair<Tensor, Tensor>>& coeffs) {
  if (coeffs.empty()) throw std::invalid_argument("dyrelu_reference needs at least one branch");
  Tensor y;
  for (const auto& [a, b] : coeffs) {
    Tensor branch = add(mul(a, x), b);
    if (branch.shape() != x.shape()) branch = expand(branch, x.shape());
    y = y.defined() ? maximum(y, branch) : branch;
  }
  return y;
}

Coefficients hyper_coefficients(const Tensor& f_hat, const Tensor& q_f) {
  check_pair(f_hat, q_f);
  const Tensor flat = rows_of(f_hat);
  const Shape full = f_hat.shape();
  Tensor sim = matmul(flat, transpose_last2(q_f));  // [S*S, 1]
  Tensor a0 = reshape(expand(sim, flat.shape()), full);
  Tensor a1 = reshape(expand(mean_rows(flat), flat.shape()), full);
  return {a0, a0, a1, a1};
}

Params Params::make(ParameterSet& ps, const std::string& name, std::int64_t channels, Rng& rng) {
  Params p;
  p.a0 = MlpParams::make(ps, name + ".a0", channels, channels, channels, rng);
  p.b0 = MlpParams::make(ps, name + ".b0", channels, channels, channels, rng);
  p.a1 = MlpParams::make(ps, name + ".a1", channels, channels, channels, rng);
  p.b1 = MlpParams::make(ps, name + ".b1", channels, channels, channels, rng);
  return p;
}

Coefficients coefficient_mlps(const Coefficients& raw, const Params& params) {
  auto run = [](const MlpParams& mlp, const Tensor& grid) { return reshape(mlp(rows_of(grid)), grid.shape()); };
  return {run(params.a0, raw.a0), run(params.b0, raw.b0), run(params.a1, raw.a1), run(params.b1, raw.b1)};
}

Tensor pdyrelu_apply(const Tensor& f_hat, const Tensor& q_f, const Params& params) {
  check_pair(f_hat, q_f);
  const std::int64_t C = f_hat.dim(2);
  const Tensor flat = rows_of(f_hat);
  // Pixel branch: every raw row is sim_i * 1, so the first layer collapses to
  // sim_i * colsum(W1) + b1.
  const Tensor sim = matmul(flat, transpose_last2(q_f));
  const Tensor ones({1, C}, 1.0);
  auto pixel_mlp = [&](const MlpParams& m) {
    Tensor hidden = relu(add(matmul(sim, matmul(ones, m.fc1.weight)), m.fc1.bias));
    return m.fc2(hidden);
  };
  // Channel branch: constant across positions, so run the MLP once and broadcast.
  const Tensor pooled = mean_rows(flat);
  const Tensor a0 = pixel_mlp(params.a0), b0 = pixel_mlp(params.b0);
  const Tensor a1 = params.a1(pooled), b1 = params.b1(pooled);
  Tensor y = maximum(add(mul(a0, flat), b0), add(mul(a1, flat), b1));
  return reshape(y, f_hat.shape());
}

}  // namespace focrefine::pdyrelu
