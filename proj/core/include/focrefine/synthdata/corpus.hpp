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

#include "focrefine/synthdata/scene.hpp"

namespace focrefine::synthdata {

struct CorpusOptions {
  int n_train = 2000;
  int n_eval = 200;
  std::vector<double> contrast_mix{0.3, 0.6, 1.0};
  std::uint64_t seed = 1;
  int size = 128;
  int max_objects = 3;
  bool overwrite = false;
};

/// One (image, object) pair: `id` names images/<id>.png, objidx names
/// masks/<id>_<objidx>.png.
struct ManifestRow {
  std::string id;
  int objidx = 0;
  std::uint64_t seed = 0;
  double contrast = 1.0;
  friend bool operator==(const ManifestRow&, const ManifestRow&) = default;
};

enum class Split { kTrain = 0, kEval = 1 };

/// Scene seeds of the two splits never collide: the low bit encodes the split.
std::uint64_t scene_seed(std::uint64_t base, Split split, int index);

/// Everything about a corpus scene follows from its seed and contrast.
SceneSpec scene_spec_for(std::uint64_t seed, double contrast, int size, int max_objects);

/// Writes <root>/train and <root>/eval, each with images/, masks/ and
/// manifest.tsv, plus <root>/corpus.json. Throws if a split directory exists
/// and is non-empty unless overwrite is set.
void build_corpus(const std::string& root, const CorpusOptions& opts);

/// Single split directory.
std::vector<ManifestRow> write_split(const std::string& dir, Split split, int count, const CorpusOptions& opts);

std::vector<ManifestRow> read_manifest(const std::string& path);
void write_manifest(const std::string& path, const std::vector<ManifestRow>& rows);

struct Sample {
  std::size_t image = 0;  // index into Dataset::images
  int objidx = 0;
  double contrast = 1.0;
  BinaryMask gt;
};

struct Dataset {
  std::vector<std::string> image_ids;
  std::vector<RgbImage> images;
  std::vector<Sample> samples;
};

struct LoadOptions {
  int max_images = -1;          // -1: all
  bool first_object_only = false;
  double only_contrast = -1.0;  // >= 0 keeps images with this contrast
};

/// Loads a split directory through its manifest.
Dataset load_split(const std::string& dir, const LoadOptions& opts = {});

}  // namespace focrefine::synthdata
