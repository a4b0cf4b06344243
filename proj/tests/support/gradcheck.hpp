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

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "focrefine/numerics/ops.hpp"

namespace focrefine::testing {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

// Central finite differences over every element of every tensor in `wrt`,
// compared against the tape's reverse-mode gradients. Relative error uses
// max(|analytic|, |numeric|, floor) as the denominator.
inline GradCheckResult finite_difference_check(const std::function<Tensor()>& loss_fn, std::vector<Tensor> wrt,
                                               double step = 1e-5, double floor = 1e-5) {
  for (auto& t : wrt) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  {
    GradTape tape;
    Tensor loss;
    {
      TapeScope scope(tape);
      loss = loss_fn();
    }
    backward(loss, tape);
  }
  GradCheckResult res;
  NoGradScope no_grad;
  for (auto& t : wrt) {
    std::vector<double> analytic(t.numel(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
    auto data = t.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + step;
      const double fp = loss_fn().item();
      data[i] = saved - step;
      const double fm = loss_fn().item();
      data[i] = saved;
      const double numeric = (fp - fm) / (2.0 * step);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
      res.max_rel_error = std::max(res.max_rel_error, std::abs(analytic[i] - numeric) / denom);
      ++res.checked;
    }
  }
  return res;
}

// Scalar probe sum(out * weights) with fixed random weights, so every output
// element contributes a distinct gradient.
inline Tensor weighted_sum(const Tensor& out, const Tensor& weights) { return sum(mul(out, weights)); }

}  // namespace focrefine::testing
