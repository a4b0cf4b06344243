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

#include "focrefine/interact/oracle.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace focrefine::interact {

OracleMode oracle_mode_from_string(const std::string& s) {
  if (s == "center") return OracleMode::kCenter;
  if (s == "random") return OracleMode::kRandom;
  throw std::invalid_argument("unknown oracle mode '" + s + "' (expected center or random)");
}

std::string to_string(OracleMode m) { return m == OracleMode::kCenter ? "center" : "random"; }

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Lower envelope of parabolas: exact 1-d squared distance transform.
void edt_1d(const double* f, double* d, int n, std::vector<int>& v, std::vector<double>& z) {
  v.assign(static_cast<std::size_t>(n), 0);
  z.assign(static_cast<std::size_t>(n) + 1, 0.0);
  int k = 0;
  int first = -1;
  for (int q = 0; q < n; ++q)
    if (f[q] < kInf) {
      first = q;
      break;
    }
  if (first < 0) {
    for (int q = 0; q < n; ++q) d[q] = kInf;
    return;
  }
  v[0] = first;
  z[0] = -kInf;
  z[1] = kInf;
  for (int q = first + 1; q < n; ++q) {
    if (f[q] == kInf) continue;
    double s;
    while (true) {
      const int p = v[static_cast<std::size_t>(k)];
      s = ((f[q] + static_cast<double>(q) * q) - (f[p] + static_cast<double>(p) * p)) / (2.0 * (q - p));
      if (s <= z[static_cast<std::size_t>(k)] && k > 0) {
        --k;
        continue;
      }
      break;
    }
    ++k;
    v[static_cast<std::size_t>(k)] = q;
    z[static_cast<std::size_t>(k)] = s;
    z[static_cast<std::size_t>(k) + 1] = kInf;
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[static_cast<std::size_t>(k) + 1] < q) ++k;
    const int p = v[static_cast<std::size_t>(k)];
    d[q] = static_cast<double>(q - p) * (q - p) + f[p];
  }
}

}  // namespace

std::vector<double> squared_distance_to_boundary(const BinaryMask& set) {
  // Work on a grid padded by one outside pixel on every side.
  const int H = set.height + 2, W = set.width + 2;
  std::vector<double> g(static_cast<std::size_t>(H) * W, 0.0);
  for (int y = 0; y < set.height; ++y)
    for (int x = 0; x < set.width; ++x)
      if (set.at(y, x)) g[static_cast<std::size_t>(y + 1) * W + x + 1] = kInf;
  std::vector<int> v;
  std::vector<double> z;
  std::vector<double> col(static_cast<std::size_t>(H)), out(static_cast<std::size_t>(H));
  for (int x = 0; x < W; ++x) {
    for (int y = 0; y < H; ++y) col[static_cast<std::size_t>(y)] = g[static_cast<std::size_t>(y) * W + x];
    edt_1d(col.data(), out.data(), H, v, z);
    for (int y = 0; y < H; ++y) g[static_cast<std::size_t>(y) * W + x] = out[static_cast<std::size_t>(y)];
  }
  std::vector<double> row(static_cast<std::size_t>(W)), rout(static_cast<std::size_t>(W));
  for (int y = 0; y < H; ++y) {
    std::copy(g.begin() + static_cast<std::ptrdiff_t>(y) * W, g.begin() + static_cast<std::ptrdiff_t>(y + 1) * W,
              row.begin());
    edt_1d(row.data(), rout.data(), W, v, z);
    std::copy(rout.begin(), rout.end(), g.begin() + static_cast<std::ptrdiff_t>(y) * W);
  }
  std::vector<double> res(static_cast<std::size_t>(set.height) * set.width, 0.0);
  for (int y = 0; y < set.height; ++y)
    for (int x = 0; x < set.width; ++x)
      res[static_cast<std::size_t>(y) * set.width + x] = g[static_cast<std::size_t>(y + 1) * W + x + 1];
  return res;
}

std::vector<int> connected_components(const BinaryMask& m, int* count) {
  std::vector<int> label(m.data.size(), 0);
  int next = 0;
  std::vector<std::size_t> stack;
  for (std::size_t s = 0; s < m.data.size(); ++s) {
    if (!m.data[s] || label[s]) continue;
    label[s] = ++next;
    stack.push_back(s);
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      const int y = static_cast<int>(p / m.width), x = static_cast<int>(p % m.width);
      const int ny[4] = {y - 1, y + 1, y, y}, nx[4] = {x, x, x - 1, x + 1};
      for (int k = 0; k < 4; ++k) {
        if (ny[k] < 0 || nx[k] < 0 || ny[k] >= m.height || nx[k] >= m.width) continue;
        const std::size_t q = static_cast<std::size_t>(ny[k]) * m.width + nx[k];
        if (m.data[q] && !label[q]) {
          label[q] = next;
          stack.push_back(q);
        }
      }
    }
  }
  if (count) *count = next;
  return label;
}

std::optional<OracleClick> next_click(const BinaryMask& pred, const BinaryMask& gt, OracleMode mode, Rng& rng) {
  if (pred.height != gt.height || pred.width != gt.width) throw std::invalid_argument("next_click: shape mismatch");
  BinaryMask fn(gt.height, gt.width), fp(gt.height, gt.width);
  std::vector<std::size_t> errors;
  for (std::size_t i = 0; i < gt.data.size(); ++i) {
    fn.data[i] = gt.data[i] && !pred.data[i];
    fp.data[i] = pred.data[i] && !gt.data[i];
    if (fn.data[i] || fp.data[i]) errors.push_back(i);
  }
  if (errors.empty()) return std::nullopt;
  const int W = gt.width;
  if (mode == OracleMode::kRandom) {
    std::uniform_int_distribution<std::size_t> pick(0, errors.size() - 1);
    const std::size_t i = errors[pick(rng)];
    return OracleClick{{static_cast<int>(i % W), static_cast<int>(i / W), fn.data[i] != 0}, 0.0};
  }
  const auto dfn = squared_distance_to_boundary(fn);
  const auto dfp = squared_distance_to_boundary(fp);
  std::size_t best = errors.front();
  double best_d = -1.0;
  for (std::size_t i : errors) {
    const double d = fn.data[i] ? dfn[i] : dfp[i];
    if (d > best_d) {
      best_d = d;
      best = i;
    }
  }
  return OracleClick{{static_cast<int>(best % W), static_cast<int>(best / W), fn.data[best] != 0}, std::sqrt(best_d)};
}

}  // namespace focrefine::interact
