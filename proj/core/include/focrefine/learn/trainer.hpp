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
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "focrefine/learn/optim.hpp"
#include "focrefine/samlite/model.hpp"
#include "focrefine/synthdata/corpus.hpp"

namespace focrefine::learn {

struct TrainConfig {
  int stage = 1;  // 1: encoder + prompt + decoder, 2: refiner only
  int steps = 2000;
  int batch = 4;
  int max_clicks = 20;
  // Click-count and refine-step decay per data source. Samples whose
  // contrast is at most fine_contrast count as the fine-detail source.
  double gamma_click_coarse = 0.6;
  double gamma_click_fine = 0.9;
  double gamma_refine_coarse = 0.6;
  double gamma_refine_fine = 0.35;
  double fine_contrast = 0.3;
  double ptl_weight = 0.1;
  LrSchedule schedule{1e-3, 1e-4, 50, 2000, 1.0};
  AdamWOptions optim;
  bool hflip = true;
  std::uint64_t seed = 1;
  std::string log_path;         // JSON lines; empty disables
  std::string checkpoint_path;  // final and periodic checkpoints; empty disables
  int checkpoint_every = 0;     // 0: only at the end
  int log_every = 10;
  int probe_every = 100;  // 0 disables the IoU probe
  int probe_samples = 8;
  int probe_clicks = 3;

  void validate() const;
};

struct LogRecord {
  int step = 0;
  int stage = 1;
  double nfl = 0.0;
  double ptl = 0.0;
  double lr = 0.0;
  std::optional<double> iou_probe;
};

std::string to_json_line(const LogRecord& r);

struct TrainResult {
  std::vector<LogRecord> log;     // one record per optimizer step
  std::string frozen_checksum;    // parameters the stage must not touch
  std::string trained_checksum;   // parameters the stage updates
};

/// Parameter name prefixes trained in each stage.
std::vector<std::string> trainable_prefixes(int stage);

/// Thrown when a frozen parameter receives a gradient.
class FreezeViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

using StepCallback = std::function<void(const LogRecord&)>;

/// Runs one training stage in place on `model` over every sample of `data`.
TrainResult train(samlite::Model& model, const synthdata::Dataset& data, const TrainConfig& cfg,
                  const StepCallback& on_step = {});

/// Mean IoU after `clicks` center-oracle clicks over the given samples.
double iou_probe(const samlite::Model& model, const synthdata::Dataset& data, const std::vector<std::size_t>& samples,
                 int clicks, bool use_refiner);

}  // namespace focrefine::learn
