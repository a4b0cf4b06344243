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

#include "focrefine/refiner/refiner.hpp"

#include <algorithm>
#include <stdexcept>

namespace focrefine::refiner {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::kFull:
      return "full";
    case Variant::kDwinOnly:
      return "dwin_only";
    case Variant::kPDyReLUOnly:
      return "pdyrelu_only";
  }
  return "full";
}

Variant variant_from_string(const std::string& s) {
  if (s == "full" || s == "combined") return Variant::kFull;
  if (s == "dwin_only" || s == "dwin-only") return Variant::kDwinOnly;
  if (s == "pdyrelu_only" || s == "pdyrelu-only") return Variant::kPDyReLUOnly;
  throw std::invalid_argument("unknown refiner variant '" + s + "' (expected full, dwin_only or pdyrelu_only)");
}

MsaParams MsaParams::make(ParameterSet& ps, const std::string& name, const Config& cfg, Rng& rng) {
  const auto C = cfg.channels;
  const auto S = static_cast<std::int64_t>(cfg.window);
  MsaParams p;
  p.ln_q = LayerNormParams::make(ps, name + ".ln_q", C);
  p.ln1 = LayerNormParams::make(ps, name + ".ln1", C);
  p.ln2 = LayerNormParams::make(ps, name + ".ln2", C);
  p.query_attn = AttentionParams::make(ps, name + ".query_attn", C, cfg.heads, rng, cfg.value_gain);
  p.self_attn = AttentionParams::make(ps, name + ".self_attn", C, cfg.heads, rng, cfg.value_gain);
  p.pos = ps.add(name + ".pos", Tensor::randn({S * S, C}, rng, 0.02));
  p.act = pdyrelu::Params::make(ps, name + ".act", C, rng);
  p.offset = Conv2dParams::make_zero(ps, name + ".offset", 3, C, 18);
  p.deform = Conv2dParams::make_zero(ps, name + ".deform", 3, C, C);
  return p;
}

FocusRefiner FocusRefiner::make(ParameterSet& ps, const std::string& prefix, const Config& cfg, Rng& rng) {
  if (cfg.depth < 0) throw std::invalid_argument("refiner depth must be >= 0");
  if (cfg.window < 1) throw std::invalid_argument("refiner window must be >= 1");
  FocusRefiner r;
  r.config = cfg;
  for (int i = 0; i < cfg.depth; ++i) {
    BlockParams b;
    b.msa = MsaParams::make(ps, prefix + ".block" + std::to_string(i), cfg, rng);
    b.shift = (i % 2) == 1;
    r.blocks.push_back(std::move(b));
  }
  return r;
}

MsaOutput msa_module(const Tensor& f, const Tensor& q_c, const MsaParams& p, const Config& cfg,
                     const std::vector<std::int64_t>& valid) {
  if (f.rank() != 3 || f.dim(0) != f.dim(1)) {
    throw std::invalid_argument("msa_module expects a square window [S, S, C], got " + shape_str(f.shape()));
  }
  const auto S = f.dim(0), C = f.dim(2);
  if (q_c.shape() != Shape{1, C}) {
    throw std::invalid_argument("msa_module: query " + shape_str(q_c.shape()) + " does not match window channels " +
                                std::to_string(C));
  }
  const bool padded = !valid.empty() && static_cast<std::int64_t>(valid.size()) != S * S;
  const Tensor flat = reshape(f, {S * S, C});
  const Tensor fn = p.ln1(flat);
  // Attention only sees in-grid rows.
  const Tensor keys = padded ? gather_rows(fn, valid) : fn;
  const Tensor q_f = p.query_attn(p.ln_q(q_c), keys, keys);

  Tensor f_hat;
  if (cfg.variant == Variant::kPDyReLUOnly) {
    f_hat = fn;
  } else if (padded) {
    const Tensor g = add(keys, gather_rows(p.pos, valid));
    f_hat = scatter_rows(Tensor({S * S, C}, 0.0), p.self_attn(g, g, g), valid);
  } else {
    const Tensor g = add(fn, p.pos);
    f_hat = p.self_attn(g, g, g);
  }

  Tensor activated;
  if (cfg.variant == Variant::kDwinOnly) {
    activated = relu(f_hat);
  } else {
    activated = reshape(pdyrelu::pdyrelu_apply(reshape(f_hat, {S, S, C}), q_f, p.act), {S * S, C});
  }

  const Tensor x = reshape(p.ln2(add(flat, activated)), {S, S, C});
  const Tensor offsets = conv2d(x, p.offset.weight, p.offset.bias);
  const Tensor branch = deform_conv2d(x, offsets, p.deform.weight, p.deform.bias);
  return {add(f, branch), q_f};
}

BlockOutput refine_block(const Tensor& F, const Tensor& q, const std::optional<dwin::BBox>& region,
                         const BlockParams& p, const Config& cfg) {
  if (F.rank() != 3) throw std::invalid_argument("refine_block expects F as [h, w, C]");
  const auto h = F.dim(0), w = F.dim(1);
  const int S = cfg.window;
  const dwin::Shift shift = p.shift ? dwin::half_shift(S) : dwin::Shift{};
  std::vector<dwin::WindowIndex> selected;
  if (cfg.variant == Variant::kPDyReLUOnly) {
    const auto [wr, wc] = dwin::window_grid(h, w, S);
    for (int r = 0; r < wr; ++r)
      for (int c = 0; c < wc; ++c) selected.push_back({r, c});
  } else {
    selected = dwin::select_windows(region, h, w, S, shift);
  }
  if (selected.empty()) return {F, q, {}};

  dwin::WindowSet ws = dwin::gather_windows(F, S, shift, selected);
  std::vector<Tensor> queries;
  queries.reserve(selected.size());
  for (std::size_t k = 0; k < selected.size(); ++k) {
    const auto rows = dwin::window_rows(h, w, S, shift, selected[k]);
    std::vector<std::int64_t> valid;
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(rows.size()); ++i)
      if (rows[i] >= 0) valid.push_back(i);
    auto out = msa_module(ws.windows[k], q, p.msa, cfg, valid);
    ws.windows[k] = out.f_q;
    queries.push_back(out.q_f);
  }
  Tensor q_new = queries.size() == 1 ? queries.front() : mean_rows(concat_rows(queries));
  return {dwin::scatter_selected(F, ws), q_new, std::move(selected)};
}

std::optional<dwin::BBox> focus_region(std::int64_t h, std::int64_t w, const Tensor& prev_logits,
                                       const std::vector<std::pair<int, int>>& click_cells, double bbox_expand) {
  std::optional<dwin::BBox> box;
  if (prev_logits.defined()) {
    Tensor m = prev_logits.rank() == 3 ? reshape(prev_logits.detach(), {prev_logits.dim(0), prev_logits.dim(1)})
                                       : prev_logits.detach();
    if (m.dim(0) % h != 0 || m.dim(1) % w != 0 || m.dim(0) / h != m.dim(1) / w) {
      throw std::invalid_argument("previous mask " + shape_str(m.shape()) + " is not a multiple of grid " +
                                  std::to_string(h) + "x" + std::to_string(w));
    }
    box = dwin::mask_bbox(dwin::downsample_max(m, static_cast<int>(m.dim(0) / h)), 0.0);
  }
  if (!box) {
    for (const auto& [r, c] : click_cells) {
      if (r < 0 || c < 0 || r >= h || c >= w) throw std::out_of_range("click cell outside grid");
      if (!box) {
        box = dwin::BBox{c, r, c, r};
      } else {
        box->x1 = std::min(box->x1, c);
        box->x2 = std::max(box->x2, c);
        box->y1 = std::min(box->y1, r);
        box->y2 = std::max(box->y2, r);
      }
    }
  }
  if (box) box = dwin::expand_bbox(*box, bbox_expand, h, w);
  return box;
}

Tensor focus_refine(const Tensor& F, const Tensor& prev_logits, const Tensor& q_prev, const FocusRefiner& r,
                    const std::vector<std::pair<int, int>>& click_cells, RefineTrace* trace) {
  if (F.rank() != 3 || F.dim(2) != r.config.channels) {
    throw std::invalid_argument("focus_refine: embedding " + shape_str(F.shape()) + " does not match refiner width " +
                                std::to_string(r.config.channels));
  }
  const auto region = focus_region(F.dim(0), F.dim(1), prev_logits, click_cells, r.config.bbox_expand);
  if (trace) {
    trace->region = region;
    trace->selected.clear();
  }
  Tensor cur = F, q = q_prev;
  for (const auto& blk : r.blocks) {
    auto out = refine_block(cur, q, region, blk, r.config);
    cur = out.F;
    q = out.q;
    if (trace) trace->selected.push_back(std::move(out.selected));
  }
  return cur;
}

}  // namespace focrefine::refiner
