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

#include "focrefine/serve/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace focrefine::serve {

namespace pt = boost::property_tree;

refiner::Config AppConfig::refiner_config(refiner::Config base) const {
  if (refiner.window) base.window = *refiner.window;
  if (refiner.variant) base.variant = *refiner.variant;
  return base;
}

namespace {

const std::map<std::string, std::set<std::string>>& known_keys() {
  static const std::map<std::string, std::set<std::string>> keys{
      {"model", {"checkpoint", "preset", "seed"}},
      {"refiner", {"enabled", "refine_step", "window", "variant"}},
      {"service", {"host", "port", "state_dir", "corpus", "threads"}},
      {"eval", {"corpus", "split", "noc", "cap", "clicks", "oracle", "max_samples", "output"}},
  };
  return keys;
}

template <typename T>
void read(const pt::ptree& tree, const std::string& key, T& out) {
  if (auto v = tree.get_optional<T>(key)) out = *v;
  else if (tree.get_child_optional(key)) throw std::invalid_argument("config key " + key + " has an invalid value");
}

}  // namespace

AppConfig parse_config(const std::string& text) {
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  for (const auto& [section, body] : tree) {
    const auto it = known_keys().find(section);
    if (it == known_keys().end()) throw std::invalid_argument("config: unknown section [" + section + "]");
    for (const auto& kv : body) {
      if (!it->second.count(kv.first)) {
        throw std::invalid_argument("config: unknown key " + section + "." + kv.first);
      }
    }
  }
  AppConfig c;
  read(tree, "model.checkpoint", c.model.checkpoint);
  read(tree, "model.preset", c.model.preset);
  read(tree, "model.seed", c.model.seed);
  read(tree, "refiner.enabled", c.refiner.enabled);
  read(tree, "refiner.refine_step", c.refiner.refine_step);
  if (auto w = tree.get_optional<int>("refiner.window")) c.refiner.window = *w;
  else if (tree.get_child_optional("refiner.window")) throw std::invalid_argument("config: refiner.window must be an integer");
  if (auto v = tree.get_optional<std::string>("refiner.variant")) c.refiner.variant = refiner::variant_from_string(*v);
  read(tree, "service.host", c.service.host);
  read(tree, "service.port", c.service.port);
  read(tree, "service.state_dir", c.service.state_dir);
  read(tree, "service.corpus", c.service.corpus);
  read(tree, "service.threads", c.service.threads);
  read(tree, "eval.corpus", c.eval.corpus);
  read(tree, "eval.split", c.eval.split);
  read(tree, "eval.noc", c.eval.noc);
  read(tree, "eval.cap", c.eval.cap);
  read(tree, "eval.clicks", c.eval.clicks);
  read(tree, "eval.oracle", c.eval.oracle);
  read(tree, "eval.max_samples", c.eval.max_samples);
  read(tree, "eval.output", c.eval.output);
  if (c.refiner.refine_step < 1) throw std::invalid_argument("config: refiner.refine_step must be >= 1");
  if (c.service.port < 0 || c.service.port > 65535) throw std::invalid_argument("config: service.port out of range");
  if (c.eval.cap < 1 || c.eval.clicks < 1) throw std::invalid_argument("config: eval.cap and eval.clicks must be >= 1");
  return c;
}

AppConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::optional<std::string> resolve_config_path(const std::optional<std::string>& explicit_path) {
  if (explicit_path && !explicit_path->empty()) return explicit_path;
  if (const char* env = std::getenv("FOCREFINE_CONFIG"); env != nullptr && *env != '\0') return std::string(env);
  return std::nullopt;
}

}  // namespace focrefine::serve
