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

#include "focrefine/synthdata/scene.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

namespace focrefine::synthdata {

std::string to_string(ShapeFamily f) {
  switch (f) {
    case ShapeFamily::kEllipse:
      return "ellipse";
    case ShapeFamily::kBlob:
      return "blob";
    case ShapeFamily::kPolygon:
      return "polygon";
    case ShapeFamily::kMixed:
      return "mixed";
  }
  return "mixed";
}

ShapeFamily shape_family_from_string(const std::string& s) {
  if (s == "ellipse") return ShapeFamily::kEllipse;
  if (s == "blob") return ShapeFamily::kBlob;
  if (s == "polygon") return ShapeFamily::kPolygon;
  if (s == "mixed") return ShapeFamily::kMixed;
  throw std::invalid_argument("unknown shape family '" + s + "'");
}

bool ObjectShape::contains(double x, double y) const {
  const double dx = x - cx, dy = y - cy;
  switch (family) {
    case ShapeFamily::kEllipse: {
      const double c = std::cos(theta), s = std::sin(theta);
      const double u = dx * c + dy * s, v = -dx * s + dy * c;
      return (u * u) / (a * a) + (v * v) / (b * b) <= 1.0;
    }
    case ShapeFamily::kBlob: {
      const double phi = std::atan2(dy, dx);
      double r = 1.0;
      for (std::size_t k = 0; k < amp.size(); ++k) r += amp[k] * std::cos(static_cast<double>(k + 2) * phi + phase[k]);
      return std::hypot(dx, dy) <= radius * r;
    }
    case ShapeFamily::kPolygon: {
      bool inside = false;
      const std::size_t n = vertices.size();
      for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
        const auto [xi, yi] = vertices[i];
        const auto [xj, yj] = vertices[j];
        if ((yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi) inside = !inside;
      }
      return inside;
    }
    case ShapeFamily::kMixed:
      break;
  }
  throw std::logic_error("shape without a concrete family");
}

BinaryMask rasterize(const ObjectShape& s, int h, int w) {
  BinaryMask m(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) m.at(y, x) = s.contains(x + 0.5, y + 0.5) ? 1 : 0;
  return m;
}

namespace {

constexpr double kTextureAmplitude = 35.0;
constexpr double kGrainSigma = 6.0;
constexpr int kPlacementRetries = 200;

// Smooth value noise in [-1, 1], one independent lattice per channel.
std::vector<double> value_noise(int h, int w, double cell, Rng& rng) {
  const int gh = static_cast<int>(std::ceil(h / cell)) + 2, gw = static_cast<int>(std::ceil(w / cell)) + 2;
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> lattice(static_cast<std::size_t>(gh) * gw * 3);
  for (auto& v : lattice) v = u(rng);
  auto smooth = [](double t) { return t * t * (3.0 - 2.0 * t); };
  std::vector<double> out(static_cast<std::size_t>(h) * w * 3);
  for (int y = 0; y < h; ++y) {
    const double fy = (y + 0.5) / cell;
    const int y0 = static_cast<int>(fy);
    const double ty = smooth(fy - y0);
    for (int x = 0; x < w; ++x) {
      const double fx = (x + 0.5) / cell;
      const int x0 = static_cast<int>(fx);
      const double tx = smooth(fx - x0);
      for (int c = 0; c < 3; ++c) {
        auto L = [&](int yy, int xx) { return lattice[(static_cast<std::size_t>(yy) * gw + xx) * 3 + c]; };
        out[(static_cast<std::size_t>(y) * w + x) * 3 + c] =
            (1 - ty) * ((1 - tx) * L(y0, x0) + tx * L(y0, x0 + 1)) + ty * ((1 - tx) * L(y0 + 1, x0) + tx * L(y0 + 1, x0 + 1));
      }
    }
  }
  return out;
}

std::vector<double> texture(int h, int w, const double base[3], double cell, Rng& rng) {
  std::vector<double> t = value_noise(h, w, cell, rng);
  std::normal_distribution<double> grain(0.0, kGrainSigma);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = base[i % 3] + kTextureAmplitude * t[i] + grain(rng);
  return t;
}

std::uint8_t quantize(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

ObjectShape sample_shape(ShapeFamily family, double r, double cx, double cy, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ObjectShape s;
  s.family = family;
  s.cx = cx;
  s.cy = cy;
  switch (family) {
    case ShapeFamily::kEllipse:
      s.a = r * (0.5 + 0.5 * u(rng));
      s.b = r * (0.5 + 0.5 * u(rng));
      s.theta = std::numbers::pi * u(rng);
      break;
    case ShapeFamily::kBlob: {
      double total = 0.0;
      for (int k = 0; k < 4; ++k) {
        s.amp.push_back(0.3 * u(rng) / (k + 1));
        s.phase.push_back(2.0 * std::numbers::pi * u(rng));
        total += s.amp.back();
      }
      s.radius = r / (1.0 + total);
      break;
    }
    case ShapeFamily::kPolygon: {
      const int n = 3 + static_cast<int>(u(rng) * 6.0);
      std::vector<double> ang;
      for (int i = 0; i < n; ++i) ang.push_back(2.0 * std::numbers::pi * u(rng));
      std::sort(ang.begin(), ang.end());
      for (double t : ang) {
        const double rr = r * (0.55 + 0.45 * u(rng));
        s.vertices.emplace_back(cx + rr * std::cos(t), cy + rr * std::sin(t));
      }
      break;
    }
    case ShapeFamily::kMixed:
      throw std::logic_error("sample_shape needs a concrete family");
  }
  return s;
}

}  // namespace

Scene generate_scene(const SceneSpec& spec) {
  if (spec.height < 16 || spec.width < 16) throw std::invalid_argument("scene canvas must be at least 16x16");
  if (spec.object_count < 0) throw std::invalid_argument("object count must be >= 0");
  if (!(spec.contrast >= 0.0 && spec.contrast <= 1.0)) throw std::invalid_argument("contrast must lie in [0, 1]");
  if (!(spec.noise_scale > 0.0)) throw std::invalid_argument("noise scale must be positive");
  const int H = spec.height, W = spec.width;
  Rng rng(spec.seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);

  double bg_base[3];
  for (double& v : bg_base) v = 40.0 + 175.0 * u(rng);
  const std::vector<double> bg = texture(H, W, bg_base, spec.noise_scale, rng);

  Scene scene;
  scene.background = RgbImage(H, W);
  for (std::size_t i = 0; i < bg.size(); ++i) scene.background.data[i] = quantize(bg[i]);
  std::vector<double> canvas = bg;

  // Occupancy with a 2-pixel guard band keeps objects disjoint.
  BinaryMask occupied(H, W);
  const double side = std::min(H, W);
  for (int k = 0; k < spec.object_count; ++k) {
    bool placed = false;
    for (int attempt = 0; attempt < kPlacementRetries && !placed; ++attempt) {
      ShapeFamily fam = spec.family;
      if (fam == ShapeFamily::kMixed) fam = static_cast<ShapeFamily>(static_cast<int>(u(rng) * 3.0) % 3);
      const double r = side * (0.1 + 0.2 * u(rng));
      const double cx = r + 2.0 + u(rng) * (W - 2.0 * r - 4.0);
      const double cy = r + 2.0 + u(rng) * (H - 2.0 * r - 4.0);
      ObjectShape shape = sample_shape(fam, r, cx, cy, rng);
      BinaryMask m = rasterize(shape, H, W);
      if (m.count() < 16) continue;
      bool clash = false;
      for (int y = 0; y < H && !clash; ++y)
        for (int x = 0; x < W && !clash; ++x) {
          if (!m.at(y, x)) continue;
          if (y == 0 || x == 0 || y == H - 1 || x == W - 1) clash = true;
          for (int dy = -2; dy <= 2 && !clash; ++dy)
            for (int dx = -2; dx <= 2 && !clash; ++dx) {
              const int yy = y + dy, xx = x + dx;
              if (yy >= 0 && xx >= 0 && yy < H && xx < W && occupied.at(yy, xx)) clash = true;
            }
        }
      if (clash) continue;

      double obj_base[3];
      double dist = 0.0;
      do {
        for (double& v : obj_base) v = 40.0 + 175.0 * u(rng);
        dist = std::hypot(obj_base[0] - bg_base[0], obj_base[1] - bg_base[1], obj_base[2] - bg_base[2]);
      } while (dist < 90.0);
      const std::vector<double> obj = texture(H, W, obj_base, spec.noise_scale * (0.5 + u(rng)), rng);
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          if (!m.at(y, x)) continue;
          occupied.at(y, x) = 1;
          for (int c = 0; c < 3; ++c) {
            const std::size_t i = (static_cast<std::size_t>(y) * W + x) * 3 + c;
            canvas[i] = bg[i] + spec.contrast * (obj[i] - bg[i]);
          }
        }
      scene.masks.push_back(std::move(m));
      scene.shapes.push_back(std::move(shape));
      placed = true;
    }
    if (!placed) {
      throw std::runtime_error("could not place object " + std::to_string(k) + " for scene seed " +
                               std::to_string(spec.seed));
    }
  }
  scene.image = RgbImage(H, W);
  for (std::size_t i = 0; i < canvas.size(); ++i) scene.image.data[i] = quantize(canvas[i]);
  return scene;
}

}  // namespace focrefine::synthdata
