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

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "focrefine/evalbench/metrics.hpp"
#include "focrefine/interact/oracle.hpp"
#include "focrefine/samlite/image.hpp"
#include "focrefine/samlite/model.hpp"

namespace focrefine::interact {

struct SessionOptions {
  int refine_step = 2;      // K
  bool use_refiner = true;  // false: the baseline pipeline
};

struct StepResult {
  Tensor logits;  // [L, L]
  int click_index = 0;
  bool refined_now = false;
  double refine_seconds = 0.0;
};

/// One object's interactive state over a cached image embedding. Steps are
/// sequential; independent sessions may share one model and embedding.
class Session {
 public:
  Session(std::shared_ptr<const samlite::Model> model, Tensor embedding, SessionOptions opts = {});

  /// click in model-input coordinates.
  StepResult step(const Click& click);

  void close() { closed_ = true; }
  bool closed() const { return closed_; }

  const std::vector<Click>& clicks() const { return clicks_; }
  bool refine_done() const { return refine_done_; }
  int refiner_invocations() const { return refiner_invocations_; }
  const Tensor& embedding() const { return embedding_; }
  // Storage identity of the embedding the decoder currently reads.
  const void* embedding_tag() const { return embedding_.id(); }
  const Tensor& prev_logits() const { return prev_logits_; }
  const Tensor& prev_query() const { return prev_query_; }
  const SessionOptions& options() const { return opts_; }

 private:
  std::shared_ptr<const samlite::Model> model_;
  Tensor embedding_;
  SessionOptions opts_;
  std::vector<Click> clicks_;
  Tensor prev_logits_;
  Tensor prev_query_;
  bool refine_done_ = false;
  bool closed_ = false;
  int refiner_invocations_ = 0;
};

struct SimulationOptions {
  int max_clicks = 20;
  OracleMode mode = OracleMode::kCenter;
  SessionOptions session;
  std::uint64_t seed = 0;  // random-mode oracle stream
};

/// Produces the binary prediction (original resolution) after a click given
/// in original-image coordinates.
using StepFn = std::function<BinaryMask(const Click& click)>;

/// Oracle loop over any predictor; records IoU and wall time per click and
/// stops at max_clicks or when prediction and ground truth agree.
evalbench::MetricsRecord simulate_loop(const BinaryMask& gt, const StepFn& step, int max_clicks, OracleMode mode,
                                       std::uint64_t seed);

/// Oracle-driven loop: click, step, IoU at the original resolution; stops at
/// max_clicks or when prediction and ground truth agree.
evalbench::MetricsRecord run_simulation(std::shared_ptr<const samlite::Model> model, const Tensor& embedding,
                                        const samlite::InputFrame& frame, const BinaryMask& gt,
                                        const SimulationOptions& opts, const std::string& sample_id = "");

/// Thresholded prediction at the original image resolution.
BinaryMask prediction_mask(const Tensor& logits, const samlite::InputFrame& frame);

}  // namespace focrefine::interact
