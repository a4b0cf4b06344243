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

#include "focrefine/learn/sampling.hpp"

#include <random>
#include <stdexcept>
#include <string>

namespace focrefine::learn {

std::vector<double> decay_probabilities(double gamma, int n_max) {
  if (!(gamma > 0.0 && gamma < 1.0)) {
    throw std::invalid_argument("decay coefficient must lie in (0, 1), got " + std::to_string(gamma));
  }
  if (n_max < 1) throw std::invalid_argument("support size must be >= 1, got " + std::to_string(n_max));
  std::vector<double> p(static_cast<std::size_t>(n_max));
  double w = 1.0, total = 0.0;
  for (auto& v : p) {
    v = w;
    total += w;
    w *= gamma;
  }
  for (auto& v : p) v /= total;
  return p;
}

namespace {

int draw(const std::vector<double>& p, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double r = u(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    acc += p[i];
    if (r < acc) return static_cast<int>(i) + 1;
  }
  return static_cast<int>(p.size());
}

}  // namespace

int sample_click_count(double gamma, int n_max, Rng& rng) { return draw(decay_probabilities(gamma, n_max), rng); }

int sample_refine_step(double gamma_r, int n, Rng& rng) {
  if (n < 1) throw std::invalid_argument("click count must be >= 1, got " + std::to_string(n));
  return draw(decay_probabilities(gamma_r, n), rng);
}

}  // namespace focrefine::learn
