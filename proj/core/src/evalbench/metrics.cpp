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

#include "focrefine/evalbench/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace focrefine::evalbench {

double iou(const BinaryMask& pred, const BinaryMask& gt) {
  if (pred.height != gt.height || pred.width != gt.width) {
    throw std::invalid_argument("iou: mask shapes differ (" + std::to_string(pred.height) + "x" +
                                std::to_string(pred.width) + " vs " + std::to_string(gt.height) + "x" +
                                std::to_string(gt.width) + ")");
  }
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const bool a = pred.data[i] != 0, b = gt.data[i] != 0;
    inter += a && b;
    uni += a || b;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

int noc_single(const std::vector<double>& ious, double q, int cap) {
  const int n = std::min(cap, static_cast<int>(ious.size()));
  for (int i = 0; i < n; ++i)
    if (ious[static_cast<std::size_t>(i)] >= q) return i + 1;
  return cap;
}

double noc_at(const std::vector<MetricsRecord>& records, double q, int cap) {
  if (records.empty()) throw std::invalid_argument("noc_at: no records");
  if (cap < 1) throw std::invalid_argument("noc_at: cap must be >= 1");
  double total = 0.0;
  for (const auto& r : records) total += noc_single(r.ious, q, cap);
  return total / static_cast<double>(records.size());
}

StabilityReport delta_iou_stability(const std::vector<MetricsRecord>& records, double threshold, double bin_width) {
  if (!(bin_width > 0.0)) throw std::invalid_argument("bin width must be positive");
  StabilityReport rep;
  rep.histogram.bin_width = bin_width;
  const int nbins = std::max(1, static_cast<int>(std::ceil((threshold + 1.0) / bin_width - 1e-9)));
  for (int b = 0; b < nbins; ++b) rep.histogram.left.push_back(-1.0 + b * bin_width);
  rep.histogram.count.assign(static_cast<std::size_t>(nbins), 0);
  for (const auto& r : records) {
    for (std::size_t i = 1; i < r.ious.size(); ++i) {
      const double d = r.ious[i] - r.ious[i - 1];
      ++rep.total_deltas;
      if (d > threshold) continue;
      rep.events.push_back({r.sample_id, static_cast<int>(i) + 1, d});
      const int b = std::clamp(static_cast<int>(std::floor((d + 1.0) / bin_width)), 0, nbins - 1);
      ++rep.histogram.count[static_cast<std::size_t>(b)];
    }
  }
  return rep;
}

double mean_iou_at(const std::vector<MetricsRecord>& records, int k) {
  if (records.empty()) throw std::invalid_argument("mean_iou_at: no records");
  if (k < 1) throw std::invalid_argument("mean_iou_at: k must be >= 1");
  double s = 0.0;
  for (const auto& r : records) {
    if (r.ious.empty()) continue;
    s += r.ious[std::min(r.ious.size(), static_cast<std::size_t>(k)) - 1];
  }
  return s / static_cast<double>(records.size());
}

}  // namespace focrefine::evalbench
