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

#include "focrefine/numerics/tensor.hpp"

namespace focrefine::learn {

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;  // decoupled; matrices only
  double clip_norm = 1.0;      // global gradient norm clip, <= 0 disables
};

/// Adaptive-moment optimizer with decoupled weight decay over a fixed list of
/// named parameters. Parameters not in the list are never touched.
class AdamW {
 public:
  AdamW(std::vector<std::pair<std::string, Tensor>> params, AdamWOptions opts = {});

  /// Applies one update from the accumulated gradients, then clears them.
  /// Returns the gradient norm before clipping.
  double step(double lr);
  void zero_grad();
  long steps() const { return t_; }
  const std::vector<std::pair<std::string, Tensor>>& params() const { return params_; }

 private:
  std::vector<std::pair<std::string, Tensor>> params_;
  AdamWOptions opts_;
  std::vector<std::vector<double>> m_, v_;
  long t_ = 0;
};

/// Linear warmup from floor to peak, then polynomial decay to zero at total.
struct LrSchedule {
  double peak = 1e-3;
  double floor = 1e-4;
  int warmup = 50;
  int total = 2000;
  double power = 1.0;

  double at(int step) const;
};

}  // namespace focrefine::learn
