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

#include "focrefine/learn/optim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace focrefine::learn {

AdamW::AdamW(std::vector<std::pair<std::string, Tensor>> params, AdamWOptions opts)
    : params_(std::move(params)), opts_(opts) {
  for (const auto& [name, t] : params_) {
    if (!t.is_leaf()) throw std::invalid_argument("optimizer parameter " + name + " is not a leaf");
    m_.emplace_back(t.numel(), 0.0);
    v_.emplace_back(t.numel(), 0.0);
  }
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.second.zero_grad();
}

double AdamW::step(double lr) {
  double sq = 0.0;
  for (const auto& p : params_)
    if (p.second.has_grad())
      for (double g : p.second.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  const double clip = (opts_.clip_norm > 0.0 && norm > opts_.clip_norm) ? opts_.clip_norm / norm : 1.0;
  ++t_;
  const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = params_[k].second;
    if (!p.has_grad()) continue;
    const auto g = p.grad();
    auto w = p.mutable_data();
    auto& m = m_[k];
    auto& v = v_[k];
    const bool decay = p.rank() >= 2 && opts_.weight_decay > 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i] * clip;
      m[i] = opts_.beta1 * m[i] + (1.0 - opts_.beta1) * gi;
      v[i] = opts_.beta2 * v[i] + (1.0 - opts_.beta2) * gi * gi;
      if (decay) w[i] -= lr * opts_.weight_decay * w[i];
      w[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + opts_.eps);
    }
  }
  zero_grad();
  return norm;
}

double LrSchedule::at(int step) const {
  if (step < 0) throw std::invalid_argument("negative schedule step");
  if (step < warmup) return floor + (peak - floor) * static_cast<double>(step) / warmup;
  if (total <= warmup) return peak;
  const double frac = std::min(1.0, static_cast<double>(step - warmup) / (total - warmup));
  return peak * std::pow(1.0 - frac, power);
}

}  // namespace focrefine::learn
