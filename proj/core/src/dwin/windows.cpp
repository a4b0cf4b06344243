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

#include "focrefine/dwin/windows.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>
#include <string>

#include "focrefine/numerics/ops.hpp"

namespace focrefine::dwin {

namespace {

void check_grid(const Tensor& F) {
  if (F.rank() != 3) throw std::invalid_argument("patch grid must be [h, w, C], got " + shape_str(F.shape()));
}

void check_side(int S) {
  if (S <= 0) throw std::invalid_argument("window side must be positive, got " + std::to_string(S));
}

std::int64_t wrap(std::int64_t v, std::int64_t n) { return ((v % n) + n) % n; }

}  // namespace

std::pair<int, int> window_grid(std::int64_t h, std::int64_t w, int S) {
  check_side(S);
  return {static_cast<int>((h + S - 1) / S), static_cast<int>((w + S - 1) / S)};
}

std::vector<std::int64_t> window_rows(std::int64_t h, std::int64_t w, int S, Shift shift, WindowIndex win) {
  const auto [wr, wc] = window_grid(h, w, S);
  if (win.row < 0 || win.row >= wr || win.col < 0 || win.col >= wc) {
    throw std::out_of_range("window (" + std::to_string(win.row) + ", " + std::to_string(win.col) +
                            ") outside window grid " + std::to_string(wr) + "x" + std::to_string(wc));
  }
  std::vector<std::int64_t> rows;
  rows.reserve(static_cast<std::size_t>(S) * S);
  for (int a = 0; a < S; ++a) {
    const std::int64_t i = static_cast<std::int64_t>(win.row) * S + a;
    for (int b = 0; b < S; ++b) {
      const std::int64_t j = static_cast<std::int64_t>(win.col) * S + b;
      if (i >= h || j >= w) {
        rows.push_back(-1);
      } else {
        rows.push_back(wrap(i + shift.dy, h) * w + wrap(j + shift.dx, w));
      }
    }
  }
  return rows;
}

WindowSet gather_windows(const Tensor& F, int S, Shift shift, const std::vector<WindowIndex>& index) {
  check_grid(F);
  check_side(S);
  WindowSet ws;
  ws.S = S;
  ws.shift = shift;
  ws.h = F.dim(0);
  ws.w = F.dim(1);
  ws.index = index;
  const std::int64_t C = F.dim(2);
  for (const auto& win : index) {
    ws.windows.push_back(reshape(gather_rows(F, window_rows(ws.h, ws.w, S, shift, win)), {S, S, C}));
  }
  return ws;
}

WindowSet partition_windows(const Tensor& F, int S, Shift shift) {
  check_grid(F);
  const auto [wr, wc] = window_grid(F.dim(0), F.dim(1), S);
  std::vector<WindowIndex> all;
  for (int r = 0; r < wr; ++r)
    for (int c = 0; c < wc; ++c) all.push_back({r, c});
  return gather_windows(F, S, shift, all);
}

Tensor scatter_selected(const Tensor& F, const WindowSet& ws) {
  check_grid(F);
  if (ws.index.size() != ws.windows.size()) {
    throw std::invalid_argument("window set has " + std::to_string(ws.index.size()) + " indices but " +
                                std::to_string(ws.windows.size()) + " blocks");
  }
  if (ws.h != F.dim(0) || ws.w != F.dim(1)) throw std::invalid_argument("window set grid does not match F");
  if (ws.index.empty()) return F;
  std::set<WindowIndex> seen;
  std::vector<std::int64_t> rows;
  std::vector<Tensor> blocks;
  for (std::size_t k = 0; k < ws.index.size(); ++k) {
    if (!seen.insert(ws.index[k]).second) {
      throw std::invalid_argument("duplicate window index (" + std::to_string(ws.index[k].row) + ", " +
                                  std::to_string(ws.index[k].col) + ")");
    }
    const auto& blk = ws.windows[k];
    if (blk.shape() != Shape{ws.S, ws.S, F.dim(2)}) {
      throw std::invalid_argument("window block shape " + shape_str(blk.shape()) + " inconsistent with S=" +
                                  std::to_string(ws.S) + ", C=" + std::to_string(F.dim(2)));
    }
    auto r = window_rows(ws.h, ws.w, ws.S, ws.shift, ws.index[k]);
    rows.insert(rows.end(), r.begin(), r.end());
    blocks.push_back(reshape(blk, {ws.S * ws.S, F.dim(2)}));
  }
  Tensor src = blocks.size() == 1 ? blocks.front() : concat_rows(blocks);
  return scatter_rows(F, src, rows);
}

Tensor merge_windows(const WindowSet& ws, std::int64_t h, std::int64_t w) {
  const auto [wr, wc] = window_grid(h, w, ws.S);
  if (static_cast<int>(ws.index.size()) != wr * wc || ws.windows.empty()) {
    throw std::invalid_argument("merge_windows needs all " + std::to_string(wr * wc) + " windows, got " +
                                std::to_string(ws.index.size()));
  }
  if (ws.h != h || ws.w != w) throw std::invalid_argument("merge_windows: grid size mismatch");
  return scatter_selected(Tensor({h, w, ws.windows.front().dim(2)}, 0.0), ws);
}

std::optional<BBox> mask_bbox(const Tensor& M, double threshold) {
  if (M.rank() != 2 && !(M.rank() == 3 && M.dim(2) == 1)) {
    throw std::invalid_argument("mask_bbox expects [h, w] or [h, w, 1], got " + shape_str(M.shape()));
  }
  const auto h = M.dim(0), w = M.dim(1);
  const auto d = M.data();
  std::optional<BBox> box;
  for (std::int64_t i = 0; i < h; ++i) {
    for (std::int64_t j = 0; j < w; ++j) {
      if (!(d[i * w + j] > threshold)) continue;
      const int x = static_cast<int>(j), y = static_cast<int>(i);
      if (!box) {
        box = BBox{x, y, x, y};
      } else {
        box->x1 = std::min(box->x1, x);
        box->x2 = std::max(box->x2, x);
        box->y1 = std::min(box->y1, y);
        box->y2 = std::max(box->y2, y);
      }
    }
  }
  return box;
}

Tensor downsample_max(const Tensor& M, int stride) {
  if (M.rank() != 2) throw std::invalid_argument("downsample_max expects [H, W], got " + shape_str(M.shape()));
  if (stride < 1) throw std::invalid_argument("downsample_max: stride must be >= 1");
  const auto H = M.dim(0), W = M.dim(1);
  const auto h = (H + stride - 1) / stride, w = (W + stride - 1) / stride;
  std::vector<double> out(static_cast<std::size_t>(h * w), -std::numeric_limits<double>::infinity());
  const auto d = M.data();
  for (std::int64_t i = 0; i < H; ++i)
    for (std::int64_t j = 0; j < W; ++j) {
      double& o = out[(i / stride) * w + j / stride];
      o = std::max(o, d[i * W + j]);
    }
  return Tensor({h, w}, std::move(out));
}

BBox expand_bbox(const BBox& b, double factor, std::int64_t h, std::int64_t w) {
  if (factor == 1.0) return b;
  const double cx = 0.5 * (b.x1 + b.x2), cy = 0.5 * (b.y1 + b.y2);
  const double hw = 0.5 * b.width() * factor, hh = 0.5 * b.height() * factor;
  BBox out;
  out.x1 = std::clamp(static_cast<int>(std::floor(cx - hw + 0.5)), 0, static_cast<int>(w - 1));
  out.x2 = std::clamp(static_cast<int>(std::ceil(cx + hw - 0.5)), 0, static_cast<int>(w - 1));
  out.y1 = std::clamp(static_cast<int>(std::floor(cy - hh + 0.5)), 0, static_cast<int>(h - 1));
  out.y2 = std::clamp(static_cast<int>(std::ceil(cy + hh - 0.5)), 0, static_cast<int>(h - 1));
  if (out.x1 > out.x2) std::swap(out.x1, out.x2);
  if (out.y1 > out.y2) std::swap(out.y1, out.y2);
  return out;
}

std::vector<WindowIndex> select_windows(const std::optional<BBox>& bbox, std::int64_t h, std::int64_t w, int S,
                                        Shift shift) {
  check_side(S);
  if (!bbox) return {};
  const auto& b = *bbox;
  if (b.x1 > b.x2 || b.y1 > b.y2 || b.x1 < 0 || b.y1 < 0 || b.x2 >= w || b.y2 >= h) {
    throw std::invalid_argument("bbox (" + std::to_string(b.x1) + ", " + std::to_string(b.y1) + ", " +
                                std::to_string(b.x2) + ", " + std::to_string(b.y2) + ") outside grid " +
                                std::to_string(h) + "x" + std::to_string(w));
  }
  const auto [wr, wc] = window_grid(h, w, S);
  // Containment is separable per axis: map bbox rows/cols into shifted coordinates.
  std::vector<char> row_hit(static_cast<std::size_t>(wr), 0), col_hit(static_cast<std::size_t>(wc), 0);
  for (int y = b.y1; y <= b.y2; ++y) row_hit[wrap(y - shift.dy, h) / S] = 1;
  for (int x = b.x1; x <= b.x2; ++x) col_hit[wrap(x - shift.dx, w) / S] = 1;
  std::vector<WindowIndex> out;
  for (int r = 0; r < wr; ++r)
    for (int c = 0; c < wc; ++c)
      if (row_hit[r] && col_hit[c]) out.push_back({r, c});
  return out;
}

Tensor zoomin_crop_baseline(const Tensor& image, const BBox& bb, int out_h, int out_w) {
  if (image.rank() != 3) throw std::invalid_argument("zoomin expects [H, W, C], got " + shape_str(image.shape()));
  const auto H = image.dim(0), W = image.dim(1), C = image.dim(2);
  if (bb.x1 < 0 || bb.y1 < 0 || bb.x2 >= W || bb.y2 >= H) throw std::invalid_argument("zoomin: bbox outside image");
  if (bb.x2 < bb.x1 || bb.y2 < bb.y1) throw std::invalid_argument("zoomin: degenerate bbox");
  if (out_h < 1 || out_w < 1) throw std::invalid_argument("zoomin: output size must be positive");
  const int ch = bb.height(), cw = bb.width();
  const auto src = image.data();
  std::vector<double> out(static_cast<std::size_t>(out_h) * out_w * C);
  auto axis = [](int o, int out_n, int in_n, int& i0, int& i1, double& f) {
    double s = (o + 0.5) * static_cast<double>(in_n) / out_n - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(in_n - 1));
    i0 = static_cast<int>(std::floor(s));
    i1 = std::min(i0 + 1, in_n - 1);
    f = s - i0;
  };
  for (int oy = 0; oy < out_h; ++oy) {
    int y0, y1;
    double fy;
    axis(oy, out_h, ch, y0, y1, fy);
    for (int ox = 0; ox < out_w; ++ox) {
      int x0, x1;
      double fx;
      axis(ox, out_w, cw, x0, x1, fx);
      auto px = [&](int y, int x, std::int64_t c) { return src[((bb.y1 + y) * W + (bb.x1 + x)) * C + c]; };
      for (std::int64_t c = 0; c < C; ++c) {
        const double top = px(y0, x0, c) + fx * (px(y0, x1, c) - px(y0, x0, c));
        const double bot = px(y1, x0, c) + fx * (px(y1, x1, c) - px(y1, x0, c));
        out[(static_cast<std::size_t>(oy) * out_w + ox) * C + c] = top + fy * (bot - top);
      }
    }
  }
  return Tensor({out_h, out_w, C}, std::move(out));
}

}  // namespace focrefine::dwin
