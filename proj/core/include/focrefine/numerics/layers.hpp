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
#include <utility>
#include <vector>

#include "focrefine/numerics/ops.hpp"

namespace focrefine {

/// Ordered, named collection of trainable leaves. Modules create their
/// parameters through it so optimizers and checkpoints see one flat list.
class ParameterSet {
 public:
  Tensor& add(const std::string& name, Tensor t);

  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::vector<std::pair<std::string, Tensor>> with_prefix(const std::string& prefix) const;
  const Tensor* find(const std::string& name) const;
  std::size_t total_numel() const;

  void zero_grad();

  // FNV-1a over names, shapes and raw values of every entry matching prefix.
  std::uint64_t checksum(const std::string& prefix = "") const;

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]

  static Linear make(ParameterSet& ps, const std::string& name, std::int64_t in, std::int64_t out, Rng& rng,
                     double gain = 1.0);
  Tensor operator()(const Tensor& x) const;
};

struct LayerNormParams {
  Tensor gain;
  Tensor bias;

  static LayerNormParams make(ParameterSet& ps, const std::string& name, std::int64_t width);
  Tensor operator()(const Tensor& x) const;
};

struct Conv2dParams {
  Tensor weight;  // [k, k, Cin, Cout]
  Tensor bias;    // [Cout]

  static Conv2dParams make(ParameterSet& ps, const std::string& name, std::int64_t k, std::int64_t in,
                           std::int64_t out, Rng& rng, double gain = 1.0);
  static Conv2dParams make_zero(ParameterSet& ps, const std::string& name, std::int64_t k, std::int64_t in,
                                std::int64_t out);
};

struct AttentionParams {
  AttentionWeights w;
  int heads = 1;

  static AttentionParams make(ParameterSet& ps, const std::string& name, std::int64_t width, int heads, Rng& rng,
                              double value_gain = 1.0);
  Tensor operator()(const Tensor& x, const Tensor& y, const Tensor& z) const { return attention(x, y, z, w, heads); }
};

/// Two-layer MLP: in -> hidden (relu) -> out.
struct MlpParams {
  Linear fc1, fc2;

  static MlpParams make(ParameterSet& ps, const std::string& name, std::int64_t in, std::int64_t hidden,
                        std::int64_t out, Rng& rng, double out_gain = 1.0);
  Tensor operator()(const Tensor& x) const { return fc2(relu(fc1(x))); }
};

}  // namespace focrefine
