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

namespace focrefine::synthdata {

enum class ShapeFamily { kEllipse, kBlob, kPolygon, kMixed };

std::string to_string(ShapeFamily f);
ShapeFamily shape_family_from_string(const std::string& s);

struct SceneSpec {
  std::uint64_t seed = 0;
  int height = 128;
  int width = 128;
  int object_count = 1;
  ShapeFamily family = ShapeFamily::kMixed;
  double contrast = 1.0;     // 0: object texture drawn like the background
  double noise_scale = 12.0;  // value-noise cell size in pixels
};

/// Analytic interior predicate of one object, evaluated at pixel centers.
struct ObjectShape {
  ShapeFamily family = ShapeFamily::kEllipse;
  double cx = 0, cy = 0;
  // ellipse: semi-axes and rotation
  double a = 1, b = 1, theta = 0;
  // blob: base radius, Fourier amplitudes and phases of r(phi)
  double radius = 1;
  std::vector<double> amp, phase;
  // polygon: vertices (x, y)
  std::vector<std::pair<double, double>> vertices;

  bool contains(double x, double y) const;
};

struct Scene {
  RgbImage image;
  RgbImage background;  // the same scene with no objects painted
  std::vector<BinaryMask> masks;
  std::vector<ObjectShape> shapes;
};

/// Equal SceneSpec values give equal scenes. Throws std::runtime_error (naming the seed) when
/// the objects cannot be placed without overlap after bounded retries.
Scene generate_scene(const SceneSpec& spec);

/// Rasterizes a shape's predicate over an h x w canvas.
BinaryMask rasterize(const ObjectShape& s, int h, int w);

}  // namespace focrefine::synthdata
