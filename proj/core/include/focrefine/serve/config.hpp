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

#include <optional>
#include <string>

#include "focrefine/refiner/refiner.hpp"

namespace focrefine::serve {

/// Settings shared by the service and the command-line tool. Each field maps
/// to an INI key "<section>.<key>".
struct AppConfig {
  struct Model {
    std::string checkpoint;       // model.checkpoint
    std::string preset = "desk";  // model.preset, used when no checkpoint exists
    std::uint64_t seed = 1;       // model.seed
  } model;

  struct Refiner {
    bool enabled = true;                          // refiner.enabled
    int refine_step = 2;                          // refiner.refine_step (K)
    std::optional<int> window;                    // refiner.window (S)
    std::optional<refiner::Variant> variant;      // refiner.variant
  } refiner;

  struct Service {
    std::string host = "127.0.0.1";  // service.host
    int port = 8080;                 // service.port
    std::string state_dir;           // service.state_dir: session log and uploads
    std::string corpus;              // service.corpus: root for corpus-id sessions
    int threads = 4;                 // service.threads
  } service;

  struct Eval {
    std::string corpus;       // eval.corpus (split directory or corpus root)
    std::string split = "eval";
    double noc = 0.90;        // eval.noc
    int cap = 20;             // eval.cap
    int clicks = 20;          // eval.clicks
    std::string oracle = "center";
    int max_samples = -1;     // eval.max_samples, -1 for all
    std::string output = "reports";
  } eval;

  /// Refiner settings with the overrides applied on top of `base`.
  refiner::Config refiner_config(refiner::Config base) const;
};

/// Reads an INI file; unknown sections or keys are rejected.
AppConfig load_config(const std::string& path);
AppConfig parse_config(const std::string& text);

/// Explicit path if given, else $FOCREFINE_CONFIG, else none.
std::optional<std::string> resolve_config_path(const std::optional<std::string>& explicit_path);

}  // namespace focrefine::serve
