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
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "focrefine/numerics/layers.hpp"
#include "focrefine/refiner/refiner.hpp"

namespace focrefine {

/// A click in model-input pixel coordinates.
struct Click {
  int x = 0;
  int y = 0;
  bool positive = true;
  friend bool operator==(const Click&, const Click&) = default;
};

}  // namespace focrefine

namespace focrefine::samlite {

struct EncoderConfig {
  std::int64_t width = 64;
  int depth = 5;
  int window = 8;
  int heads = 4;
  std::int64_t mlp_hidden = 128;
  std::vector<int> global_blocks{4};  // blocks using full attention
};

struct DecoderConfig {
  int blocks = 2;
  int heads = 4;
  std::int64_t mlp_hidden = 128;
};

struct ModelConfig {
  std::string preset = "desk";
  int image_size = 128;
  int patch = 8;
  std::int64_t channels = 64;
  std::int64_t mask_hidden = 16;
  EncoderConfig encoder;
  DecoderConfig decoder;
  refiner::Config refiner;

  int grid() const { return image_size / patch; }
  int logits_size() const { return grid() * 4; }

  void validate() const;

  static ModelConfig desk();
  // 1024 input, stride 16, C = 256, depth-12 refiner with S = 16.
  static ModelConfig full();
  static ModelConfig from_preset(const std::string& name);
};

std::string config_to_json(const ModelConfig& cfg);
ModelConfig config_from_json(const std::string& text);

struct EncoderBlock {
  LayerNormParams ln1, ln2;
  AttentionParams attn;
  Linear proj;
  MlpParams mlp;
  bool global = false;
};

struct Encoder {
  Conv2dParams patch_embed;  // kernel = stride = patch
  Tensor pos;                // [grid * grid, width]
  std::vector<EncoderBlock> blocks;
  Linear neck;
  LayerNormParams neck_ln;
};

struct PromptEncoder {
  Tensor label_embed;  // [2, C]: negative, positive
  Tensor no_mask;      // [1, C]
  Conv2dParams mask_conv1;  // 2x2 stride 2, 1 -> mask_hidden
  LayerNormParams mask_ln;
  Conv2dParams mask_conv2;  // 2x2 stride 2, mask_hidden -> C
};

struct DecoderBlock {
  AttentionParams self_attn;
  AttentionParams token_to_image;  // tokens query the image
  AttentionParams image_to_token;  // image queries the tokens
  MlpParams mlp;
  LayerNormParams ln1, ln2, ln3, ln4;
};

struct Decoder {
  Tensor query;  // [1, C], the single learned query token
  std::vector<DecoderBlock> blocks;
  Conv2dParams up1, up2;  // transpose convs, kernel = stride = 2
  LayerNormParams up_ln;
};

/// Full model: encoder, prompt encoder, decoder and focus refiner, with one
/// flat parameter set named "encoder.*", "prompt.*", "decoder.*", "refiner.*".
class Model {
 public:
  static std::shared_ptr<Model> create(const ModelConfig& cfg, std::uint64_t seed);

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return config_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  const Encoder& encoder() const { return encoder_; }
  const PromptEncoder& prompt() const { return prompt_; }
  const Decoder& decoder() const { return decoder_; }
  const refiner::FocusRefiner& refiner() const { return refiner_; }
  Encoder& encoder() { return encoder_; }
  Decoder& decoder() { return decoder_; }

  void save(const std::string& path) const;
  // With refiner_override, a refiner whose shape differs from the saved one
  // starts from its initialization; every other parameter must be present.
  static std::shared_ptr<Model> load(const std::string& path,
                                     const std::optional<refiner::Config>& refiner_override = std::nullopt);

 private:
  Model() = default;
  ModelConfig config_;
  ParameterSet params_;
  Encoder encoder_;
  PromptEncoder prompt_;
  Decoder decoder_;
  refiner::FocusRefiner refiner_;
};

/// image: [S, S, 3] normalized model input -> F: [grid, grid, C].
Tensor encode_image(const Model& m, const Tensor& image);

/// Sinusoidal encoding of normalized (u, v) in [0, 1]^2 into C channels.
Tensor sinusoidal_pe(const std::vector<std::pair<double, double>>& uv, std::int64_t channels);

/// Image positional encoding at patch centers: [grid * grid, C].
Tensor image_pe(int grid, std::int64_t channels);

/// [N, C]; N >= 1, clicks inside the model input.
Tensor encode_clicks(const Model& m, const std::vector<Click>& clicks);

/// prev_logits [L, L] at logits resolution, or undefined for the no-mask path.
Tensor encode_mask(const Model& m, const Tensor& prev_logits);

struct DecodeResult {
  Tensor logits;  // [L, L]
  Tensor q_c;     // [1, C]
  Tensor f_c;     // [L, L, C] upsampled image features
};

/// logits = F_c q_c^T over every position.
Tensor mask_head(const Tensor& f_c, const Tensor& q_c);

DecodeResult decode(const Model& m, const Tensor& F, const Tensor& E, const Tensor& c);

/// Prompt encoding plus decoding against a cached embedding.
DecodeResult predict(const Model& m, const Tensor& F, const std::vector<Click>& clicks, const Tensor& prev_logits);

// ---------------------------------------------------------------------------
// Checkpoint container: "FRCK", u32 version, u32 + JSON config, u32 blob
// count, then per blob u32 name length, name, u32 rank, u32 dims, f32 data.
// All integers and floats little-endian.

struct Blob {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

struct Checkpoint {
  std::string config_json;
  std::vector<Blob> blobs;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint read_checkpoint(const std::string& path);

/// Copies blobs into matching parameters. Parameters whose name starts with
/// one of `optional_prefixes` may be absent; any other missing parameter or a
/// shape mismatch throws. Returns the number of parameters loaded.
std::size_t load_parameters(ParameterSet& ps, const Checkpoint& ck,
                            const std::vector<std::string>& optional_prefixes = {});
Checkpoint make_checkpoint(const ModelConfig& cfg, const ParameterSet& ps);

}  // namespace focrefine::samlite
