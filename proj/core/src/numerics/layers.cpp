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

#include "focrefine/numerics/layers.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace focrefine {

Tensor& ParameterSet::add(const std::string& name, Tensor t) {
  if (find(name) != nullptr) throw std::invalid_argument("duplicate parameter name: " + name);
  t.set_requires_grad(true);
  entries_.emplace_back(name, std::move(t));
  return entries_.back().second;
}

std::vector<std::pair<std::string, Tensor>> ParameterSet::with_prefix(const std::string& prefix) const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (const auto& e : entries_)
    if (e.first.rfind(prefix, 0) == 0) out.push_back(e);
  return out;
}

const Tensor* ParameterSet::find(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.first == name) return &e.second;
  return nullptr;
}

std::size_t ParameterSet::total_numel() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.second.numel();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& e : entries_) e.second.zero_grad();
}

std::uint64_t ParameterSet::checksum(const std::string& prefix) const {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& [name, t] : entries_) {
    if (name.rfind(prefix, 0) != 0) continue;
    mix(name.data(), name.size());
    mix(t.shape().data(), t.shape().size() * sizeof(std::int64_t));
    mix(t.data().data(), t.numel() * sizeof(double));
  }
  return h;
}

Linear Linear::make(ParameterSet& ps, const std::string& name, std::int64_t in, std::int64_t out, Rng& rng,
                    double gain) {
  const double sd = gain / std::sqrt(static_cast<double>(in));
  Linear l;
  l.weight = ps.add(name + ".weight", Tensor::randn({in, out}, rng, sd));
  l.bias = ps.add(name + ".bias", Tensor({out}, 0.0));
  return l;
}

Tensor Linear::operator()(const Tensor& x) const { return add(matmul(x, weight), bias); }

LayerNormParams LayerNormParams::make(ParameterSet& ps, const std::string& name, std::int64_t width) {
  LayerNormParams p;
  p.gain = ps.add(name + ".gain", Tensor({width}, 1.0));
  p.bias = ps.add(name + ".bias", Tensor({width}, 0.0));
  return p;
}

Tensor LayerNormParams::operator()(const Tensor& x) const { return layer_norm(x, gain, bias); }

Conv2dParams Conv2dParams::make(ParameterSet& ps, const std::string& name, std::int64_t k, std::int64_t in,
                                std::int64_t out, Rng& rng, double gain) {
  const double sd = gain / std::sqrt(static_cast<double>(k * k * in));
  Conv2dParams p;
  p.weight = ps.add(name + ".weight", Tensor::randn({k, k, in, out}, rng, sd));
  p.bias = ps.add(name + ".bias", Tensor({out}, 0.0));
  return p;
}

Conv2dParams Conv2dParams::make_zero(ParameterSet& ps, const std::string& name, std::int64_t k, std::int64_t in,
                                     std::int64_t out) {
  Conv2dParams p;
  p.weight = ps.add(name + ".weight", Tensor({k, k, in, out}, 0.0));
  p.bias = ps.add(name + ".bias", Tensor({out}, 0.0));
  return p;
}

AttentionParams AttentionParams::make(ParameterSet& ps, const std::string& name, std::int64_t width, int heads,
                                      Rng& rng, double value_gain) {
  if (heads < 1 || width % heads != 0) {
    throw std::invalid_argument("attention width " + std::to_string(width) + " not divisible by head count " +
                                std::to_string(heads));
  }
  const double sd = 1.0 / std::sqrt(static_cast<double>(width));
  AttentionParams p;
  p.heads = heads;
  p.w.wq = ps.add(name + ".wq", Tensor::randn({width, width}, rng, sd));
  p.w.wk = ps.add(name + ".wk", Tensor::randn({width, width}, rng, sd));
  p.w.wv = ps.add(name + ".wv", Tensor::randn({width, width}, rng, sd * value_gain));
  return p;
}

MlpParams MlpParams::make(ParameterSet& ps, const std::string& name, std::int64_t in, std::int64_t hidden,
                          std::int64_t out, Rng& rng, double out_gain) {
  MlpParams m;
  m.fc1 = Linear::make(ps, name + ".fc1", in, hidden, rng, std::sqrt(2.0));
  m.fc2 = Linear::make(ps, name + ".fc2", hidden, out, rng, out_gain);
  return m;
}

}  // namespace focrefine
