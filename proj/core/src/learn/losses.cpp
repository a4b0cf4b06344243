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

#include "focrefine/learn/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace focrefine::learn {

namespace {

double sigmoid(double s) { return s >= 0 ? 1.0 / (1.0 + std::exp(-s)) : std::exp(s) / (1.0 + std::exp(s)); }

// -log(sigmoid(s)) without overflow.
double neg_log_sigmoid(double s) { return std::log1p(std::exp(-std::abs(s))) + std::max(-s, 0.0); }

}  // namespace

Tensor nfl_loss(const Tensor& logits, const Tensor& target, double gamma) {
  if (logits.numel() == 0) throw std::invalid_argument("nfl_loss: empty logit map");
  if (logits.shape() != target.shape()) {
    throw std::invalid_argument("nfl_loss: logits " + shape_str(logits.shape()) + " vs target " +
                                shape_str(target.shape()));
  }
  const auto x = logits.data(), t = target.data();
  const std::size_t n = x.size();
  std::vector<double> s(n), w(n), l(n);
  double A = 0.0, B = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (t[i] != 0.0 && t[i] != 1.0) throw std::invalid_argument("nfl_loss: target must be 0 or 1");
    s[i] = t[i] == 1.0 ? x[i] : -x[i];
    const double q = sigmoid(-s[i]);  // 1 - p_t
    w[i] = std::pow(q, gamma);
    l[i] = neg_log_sigmoid(s[i]);
    A += w[i] * l[i];
    B += w[i];
  }
  const double L = B > 0.0 ? A / B : 0.0;
  const bool rec = detail::needs_record({&logits});
  BackwardFn fn;
  if (rec) {
    fn = [s = std::move(s), w = std::move(w), l = std::move(l), t = std::vector<double>(t.begin(), t.end()), B, L,
          gamma](std::span<const double> g, GradSink& sink) {
      auto gx = sink(0);
      if (gx.empty() || !(B > 0.0)) return;
      for (std::size_t i = 0; i < s.size(); ++i) {
        const double q = sigmoid(-s[i]), p = 1.0 - q;
        const double dw = -gamma * p * w[i];  // d w / d s
        const double dl = -q;                 // d l / d s
        const double ds = (dw * (l[i] - L) + w[i] * dl) / B;
        gx[i] += g[0] * ds * (t[i] == 1.0 ? 1.0 : -1.0);
      }
    };
  }
  return detail::finish(Shape{}, {L}, {logits}, rec, std::move(fn));
}

Tensor ptl_loss(const Tensor& probs, const std::vector<PtlPoint>& points) {
  if (probs.rank() != 2) throw std::invalid_argument("ptl_loss expects an [H, W] probability map");
  if (points.empty()) return Tensor::scalar(0.0);
  const double H = static_cast<double>(probs.dim(0)), W = static_cast<double>(probs.dim(1));
  std::vector<std::pair<double, double>> pts;
  std::vector<double> z;
  for (const auto& p : points) {
    if (!(p.x >= -0.5 && p.y >= -0.5 && p.x <= W - 0.5 && p.y <= H - 0.5)) {
      throw std::out_of_range("ptl_loss: click (" + std::to_string(p.x) + ", " + std::to_string(p.y) +
                              ") outside the map");
    }
    if (p.z != 0 && p.z != 1) throw std::invalid_argument("ptl_loss: label must be 0 or 1");
    // Clamp into the sampling domain so border clicks read border values.
    pts.emplace_back(std::clamp(p.y, 0.0, H - 1.0), std::clamp(p.x, 0.0, W - 1.0));
    z.push_back(p.z);
  }
  const Tensor m = bilinear_sample(probs, pts);
  const Tensor d = sub(m, Tensor({static_cast<std::int64_t>(z.size())}, z));
  return sum(mul(d, d));
}

PtlPoint to_map_coords(int x, int y, bool positive, int input_size, int map_size) {
  const double f = static_cast<double>(map_size) / input_size;
  return {(x + 0.5) * f - 0.5, (y + 0.5) * f - 0.5, positive ? 1 : 0};
}

}  // namespace focrefine::learn
