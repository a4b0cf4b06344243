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
#include <string>
#include <vector>

#include "focrefine/samlite/image.hpp"

namespace focrefine::evalbench {

/// Per-sample simulation result.
struct MetricsRecord {
  std::string sample_id;
  std::vector<double> ious;     // after each click, in [0, 1]
  std::vector<double> seconds;  // wall time of each click
  int refine_step = 0;          // click index at which the refiner ran, 0 if never
  std::string fingerprint;      // identifies the model / config that produced it
};

/// |a & b| / |a | b|; 1 when both are empty.
double iou(const BinaryMask& pred, const BinaryMask& gt);

/// 1-based index of the first click reaching q, else cap.
int noc_single(const std::vector<double>& ious, double q, int cap);
double noc_at(const std::vector<MetricsRecord>& records, double q, int cap);

struct StabilityEvent {
  std::string sample_id;
  int click = 0;  // index i of IoU_i in IoU_i - IoU_{i-1}, 1-based
  double delta = 0.0;
};

struct Histogram {
  double bin_width = 0.02;
  std::vector<double> left;  // bin left edges, ascending
  std::vector<std::size_t> count;
};

struct StabilityReport {
  std::vector<StabilityEvent> events;
  Histogram histogram;
  std::size_t total_deltas = 0;
};

inline constexpr double kStabilityThreshold = -0.01;
inline constexpr double kStabilityBinWidth = 0.02;

/// Keeps every consecutive-click drop with delta <= threshold; bins cover
/// [-1, threshold] in fixed-width bins anchored at -1.
StabilityReport delta_iou_stability(const std::vector<MetricsRecord>& records,
                                    double threshold = kStabilityThreshold, double bin_width = kStabilityBinWidth);

/// Mean IoU after click k (1-based); trajectories that stopped early carry
/// their last value forward.
double mean_iou_at(const std::vector<MetricsRecord>& records, int k);

}  // namespace focrefine::evalbench
