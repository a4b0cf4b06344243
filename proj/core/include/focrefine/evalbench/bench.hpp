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

#include <memory>
#include <string>
#include <vector>

#include "focrefine/evalbench/metrics.hpp"
#include "focrefine/interact/oracle.hpp"
#include "focrefine/samlite/model.hpp"
#include "focrefine/synthdata/corpus.hpp"

namespace focrefine::evalbench {

struct EvalOptions {
  int max_clicks = 20;
  interact::OracleMode mode = interact::OracleMode::kCenter;
  bool use_refiner = true;
  int refine_step = 2;
  std::uint64_t seed = 0;  // random-mode oracle streams, offset per sample
};

/// Short identifier of the model weights, geometry and protocol.
std::string fingerprint(const samlite::Model& model, const EvalOptions& opts);

/// Oracle simulation over every sample; the image embedding is computed once
/// per image and shared by its objects.
std::vector<MetricsRecord> evaluate(const std::shared_ptr<const samlite::Model>& model,
                                    const synthdata::Dataset& data, const EvalOptions& opts);

struct SpcOptions {
  int clicks_per_image = 20;
  int repetitions = 3;  // timed runs per image and pipeline, at least 3
  int warmup = 1;       // untimed runs before timing
  int refine_step = 2;
  std::uint64_t seed = 0;  // click positions
};

/// Seconds-per-click figures for one pipeline, medians over repetitions.
struct SpcFigures {
  double spc_total = 0.0;         // (encoder + refiner + every decoder step) / clicks
  double spc_decoder_only = 0.0;  // mean step time after the refine step
  double encoder_seconds = 0.0;
  double refiner_seconds = 0.0;
  int refiner_invocations = 0;  // per session, maximum over all runs
};

struct SpcReport {
  SpcFigures refined;
  SpcFigures baseline;
  int repetitions = 0;
  int clicks_per_image = 0;
  std::size_t images = 0;
  double ratio() const { return refined.spc_total / baseline.spc_total; }
};

/// Times the refiner-enabled and refiner-free pipelines over the same
/// deterministic click sequence on every image.
SpcReport spc_benchmark(const std::shared_ptr<const samlite::Model>& model, const std::vector<RgbImage>& images,
                        const SpcOptions& opts = {});

std::string spc_to_json(const SpcReport& r);

// ----------------------------------------------------------------------------
// Reports

enum class ReportFormat { kTable, kJsonLines, kHistogramTsv };

ReportFormat report_format_from_string(const std::string& s);
std::string to_string(ReportFormat f);

struct ReportOptions {
  std::vector<double> noc_thresholds{0.85, 0.90};
  int cap = 20;
  std::string label;  // e.g. the ablation variant
};

/// Renders records as text. Output depends only on the inputs.
std::string render_report(const std::vector<MetricsRecord>& records, ReportFormat format,
                          const ReportOptions& opts = {});

/// Writes render_report to `path` (replacing it).
void report_emit(const std::vector<MetricsRecord>& records, ReportFormat format, const std::string& path,
                 const ReportOptions& opts = {});

/// Records as JSON lines and back, for simulate / eval hand-off.
std::vector<MetricsRecord> read_records(const std::string& path);

}  // namespace focrefine::evalbench
