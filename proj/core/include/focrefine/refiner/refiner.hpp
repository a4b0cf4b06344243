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
#include <utility>
#include <vector>

#include "focrefine/dwin/windows.hpp"
#include "focrefine/numerics/layers.hpp"
#include "focrefine/pdyrelu/pdyrelu.hpp"

namespace focrefine::refiner {

enum class Variant {
  kFull,          // dynamic windows + P-DyReLU
  kDwinOnly,      // P-DyReLU replaced by relu
  kPDyReLUOnly,   // every window kept, window self-attention removed
};

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

struct Config {
  std::int64_t channels = 64;
  int depth = 4;   // total blocks, alternating plain / shift
  int window = 4;  // S, in patches
  int heads = 4;
  Variant variant = Variant::kFull;
  double bbox_expand = 1.0;
  double value_gain = 0.5;  // init scale of attention value projections
};

struct MsaParams {
  LayerNormParams ln_q, ln1, ln2;
  AttentionParams query_attn;  // query attends to the window
  AttentionParams self_attn;   // window self-attention
  Tensor pos;                  // [S*S, C]
  pdyrelu::Params act;
  Conv2dParams offset;  // 3x3, C -> 18, zero init
  Conv2dParams deform;  // 3x3, C -> C, zero init

  static MsaParams make(ParameterSet& ps, const std::string& name, const Config& cfg, Rng& rng);
};

struct BlockParams {
  MsaParams msa;
  bool shift = false;
};

struct FocusRefiner {
  Config config;
  std::vector<BlockParams> blocks;

  static FocusRefiner make(ParameterSet& ps, const std::string& prefix, const Config& cfg, Rng& rng);
};

struct MsaOutput {
  Tensor f_q;  // [S, S, C]
  Tensor q_f;  // [1, C]
};

/// One window through query fusion, self-attention, activation and the
/// deformable residual branch. `valid` lists the in-grid rows of the window
/// (row-major within S x S); padding rows are excluded from attention. Empty
/// means every row is valid.
MsaOutput msa_module(const Tensor& f, const Tensor& q_c, const MsaParams& p, const Config& cfg,
                     const std::vector<std::int64_t>& valid = {});

struct BlockOutput {
  Tensor F;
  Tensor q;
  std::vector<dwin::WindowIndex> selected;
};

/// Runs msa_module on the windows intersecting `region` (grid coordinates) and
/// scatters them back; q becomes the mean of the per-window queries. An empty
/// region leaves (F, q) untouched.
BlockOutput refine_block(const Tensor& F, const Tensor& q, const std::optional<dwin::BBox>& region,
                         const BlockParams& p, const Config& cfg);

/// Grid-coordinate box the refiner focuses on: the tight box of the
/// previous mask (logits > 0, max-pooled to the grid), else the box of the
/// click cells, else nothing.
std::optional<dwin::BBox> focus_region(std::int64_t h, std::int64_t w, const Tensor& prev_logits,
                                       const std::vector<std::pair<int, int>>& click_cells, double bbox_expand);

struct RefineTrace {
  std::optional<dwin::BBox> region;
  std::vector<std::vector<dwin::WindowIndex>> selected;  // per block
};

/// Chains every block, sharing the same region, and returns F_r.
Tensor focus_refine(const Tensor& F, const Tensor& prev_logits, const Tensor& q_prev, const FocusRefiner& r,
                    const std::vector<std::pair<int, int>>& click_cells = {}, RefineTrace* trace = nullptr);

}  // namespace focrefine::refiner
