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

#include "focrefine/synthdata/corpus.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "focrefine/synthdata/png.hpp"

namespace fs = std::filesystem;

namespace focrefine::synthdata {

std::uint64_t scene_seed(std::uint64_t base, Split split, int index) {
  const std::uint64_t mixed = base * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(index);
  return (mixed << 1) | static_cast<std::uint64_t>(split);
}

SceneSpec scene_spec_for(std::uint64_t seed, double contrast, int size, int max_objects) {
  Rng rng(seed ^ 0xD1B54A32D192ED03ULL);
  std::uniform_int_distribution<int> count(1, std::max(1, max_objects));
  std::uniform_real_distribution<double> noise(6.0, 20.0);
  SceneSpec s;
  s.seed = seed;
  s.height = s.width = size;
  s.object_count = count(rng);
  s.family = ShapeFamily::kMixed;
  s.contrast = contrast;
  s.noise_scale = noise(rng);
  return s;
}

namespace {

std::string image_id(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06d", i);
  return buf;
}

void prepare_dir(const fs::path& dir, bool overwrite) {
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!overwrite) throw std::runtime_error("target directory " + dir.string() + " is not empty (use overwrite)");
    fs::remove_all(dir);
  }
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "masks");
}

}  // namespace

std::vector<ManifestRow> write_split(const std::string& dir, Split split, int count, const CorpusOptions& opts) {
  if (opts.contrast_mix.empty()) throw std::invalid_argument("contrast mix must not be empty");
  prepare_dir(dir, opts.overwrite);
  std::vector<ManifestRow> rows;
  for (int i = 0; i < count; ++i) {
    const double contrast = opts.contrast_mix[static_cast<std::size_t>(i) % opts.contrast_mix.size()];
    const std::uint64_t seed = scene_seed(opts.seed, split, i);
    const Scene scene = generate_scene(scene_spec_for(seed, contrast, opts.size, opts.max_objects));
    const std::string id = image_id(i);
    write_png((fs::path(dir) / "images" / (id + ".png")).string(), scene.image);
    for (std::size_t k = 0; k < scene.masks.size(); ++k) {
      write_mask_png((fs::path(dir) / "masks" / (id + "_" + std::to_string(k) + ".png")).string(), scene.masks[k]);
      rows.push_back({id, static_cast<int>(k), seed, contrast});
    }
  }
  write_manifest((fs::path(dir) / "manifest.tsv").string(), rows);
  return rows;
}

void build_corpus(const std::string& root, const CorpusOptions& opts) {
  if (opts.n_train < 0 || opts.n_eval < 0) throw std::invalid_argument("split sizes must be >= 0");
  fs::create_directories(root);
  write_split((fs::path(root) / "train").string(), Split::kTrain, opts.n_train, opts);
  write_split((fs::path(root) / "eval").string(), Split::kEval, opts.n_eval, opts);
  nlohmann::json meta{{"size", opts.size},
                      {"max_objects", opts.max_objects},
                      {"seed", opts.seed},
                      {"contrast_mix", opts.contrast_mix},
                      {"n_train", opts.n_train},
                      {"n_eval", opts.n_eval}};
  std::ofstream((fs::path(root) / "corpus.json").string()) << meta.dump(2) << "\n";
}

void write_manifest(const std::string& path, const std::vector<ManifestRow>& rows) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "id\tobjidx\tseed\tcontrast\n";
  for (const auto& r : rows) {
    char c[32];
    std::snprintf(c, sizeof c, "%.6g", r.contrast);
    os << r.id << '\t' << r.objidx << '\t' << r.seed << '\t' << c << '\n';
  }
}

std::vector<ManifestRow> read_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open manifest " + path);
  std::string line;
  std::vector<ManifestRow> rows;
  bool header = true;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (header) {
      header = false;
      if (line.rfind("id\t", 0) == 0) continue;
    }
    std::istringstream ss(line);
    ManifestRow r;
    std::string obj, seed, contrast;
    if (!std::getline(ss, r.id, '\t') || !std::getline(ss, obj, '\t') || !std::getline(ss, seed, '\t') ||
        !std::getline(ss, contrast)) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected 4 tab-separated columns");
    }
    r.objidx = std::stoi(obj);
    r.seed = std::stoull(seed);
    r.contrast = std::stod(contrast);
    rows.push_back(std::move(r));
  }
  return rows;
}

Dataset load_split(const std::string& dir, const LoadOptions& opts) {
  const auto rows = read_manifest((fs::path(dir) / "manifest.tsv").string());
  Dataset ds;
  std::map<std::string, std::size_t> index;
  for (const auto& r : rows) {
    if (opts.only_contrast >= 0.0 && std::abs(r.contrast - opts.only_contrast) > 1e-9) continue;
    if (opts.first_object_only && r.objidx != 0) continue;
    auto it = index.find(r.id);
    if (it == index.end()) {
      if (opts.max_images >= 0 && static_cast<int>(ds.images.size()) >= opts.max_images) continue;
      it = index.emplace(r.id, ds.images.size()).first;
      ds.image_ids.push_back(r.id);
      ds.images.push_back(read_png((fs::path(dir) / "images" / (r.id + ".png")).string()));
    }
    Sample s;
    s.image = it->second;
    s.objidx = r.objidx;
    s.contrast = r.contrast;
    s.gt = read_mask_png((fs::path(dir) / "masks" / (r.id + "_" + std::to_string(r.objidx) + ".png")).string());
    const auto& img = ds.images[s.image];
    if (s.gt.height != img.height || s.gt.width != img.width) {
      throw std::runtime_error("mask " + r.id + "_" + std::to_string(r.objidx) + " does not match its image size");
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace focrefine::synthdata
