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

#include "focrefine/samlite/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include <json.hpp>

#include "focrefine/dwin/windows.hpp"

namespace focrefine::samlite {

using nlohmann::json;

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("model config: " + m); };
  if (patch < 1 || image_size < patch || image_size % patch != 0) fail("image_size must be a positive multiple of patch");
  if (channels < 4 || channels % 4 != 0) fail("channels must be a positive multiple of 4");
  if (encoder.width < 1 || encoder.depth < 1 || encoder.window < 1 || encoder.heads < 1) fail("bad encoder geometry");
  if (encoder.width % encoder.heads != 0) fail("encoder width not divisible by heads");
  if (channels % decoder.heads != 0) fail("channels not divisible by decoder heads");
  if (decoder.blocks < 1) fail("decoder needs at least one block");
  for (int g : encoder.global_blocks)
    if (g < 0 || g >= encoder.depth) fail("global block index out of range");
  if (refiner.channels != channels) fail("refiner width must equal channels");
  if (refiner.depth > 0 && channels % refiner.heads != 0) fail("channels not divisible by refiner heads");
}

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::full() {
  ModelConfig c;
  c.preset = "full";
  c.image_size = 1024;
  c.patch = 16;
  c.channels = 256;
  c.mask_hidden = 16;
  c.encoder = {512, 32, 14, 8, 2048, {7, 15, 23, 31}};
  c.decoder = {2, 8, 2048};
  c.refiner.channels = 256;
  c.refiner.depth = 12;
  c.refiner.window = 16;
  c.refiner.heads = 8;
  return c;
}

ModelConfig ModelConfig::from_preset(const std::string& name) {
  if (name == "desk") return desk();
  if (name == "full") return full();
  throw std::invalid_argument("unknown model preset '" + name + "' (expected desk or full)");
}

std::string config_to_json(const ModelConfig& cfg) {
  json j;
  j["preset"] = cfg.preset;
  j["image_size"] = cfg.image_size;
  j["patch"] = cfg.patch;
  j["channels"] = cfg.channels;
  j["mask_hidden"] = cfg.mask_hidden;
  j["encoder"] = {{"width", cfg.encoder.width},       {"depth", cfg.encoder.depth},
                  {"window", cfg.encoder.window},     {"heads", cfg.encoder.heads},
                  {"mlp_hidden", cfg.encoder.mlp_hidden}, {"global_blocks", cfg.encoder.global_blocks}};
  j["decoder"] = {{"blocks", cfg.decoder.blocks}, {"heads", cfg.decoder.heads}, {"mlp_hidden", cfg.decoder.mlp_hidden}};
  j["refiner"] = {{"channels", cfg.refiner.channels},
                  {"depth", cfg.refiner.depth},
                  {"window", cfg.refiner.window},
                  {"heads", cfg.refiner.heads},
                  {"variant", refiner::to_string(cfg.refiner.variant)},
                  {"bbox_expand", cfg.refiner.bbox_expand},
                  {"value_gain", cfg.refiner.value_gain}};
  return j.dump();
}

ModelConfig config_from_json(const std::string& text) {
  const json j = json::parse(text);
  ModelConfig c;
  c.preset = j.at("preset").get<std::string>();
  c.image_size = j.at("image_size");
  c.patch = j.at("patch");
  c.channels = j.at("channels");
  c.mask_hidden = j.at("mask_hidden");
  const auto& e = j.at("encoder");
  c.encoder = {e.at("width"), e.at("depth"), e.at("window"), e.at("heads"), e.at("mlp_hidden"),
               e.at("global_blocks").get<std::vector<int>>()};
  const auto& d = j.at("decoder");
  c.decoder = {d.at("blocks"), d.at("heads"), d.at("mlp_hidden")};
  const auto& r = j.at("refiner");
  c.refiner.channels = r.at("channels");
  c.refiner.depth = r.at("depth");
  c.refiner.window = r.at("window");
  c.refiner.heads = r.at("heads");
  c.refiner.variant = refiner::variant_from_string(r.at("variant"));
  c.refiner.bbox_expand = r.at("bbox_expand");
  c.refiner.value_gain = r.at("value_gain");
  c.validate();
  return c;
}

namespace {

Encoder make_encoder(ParameterSet& ps, const ModelConfig& cfg, Rng& rng) {
  const auto& ec = cfg.encoder;
  const std::int64_t g = cfg.grid(), W = ec.width;
  Encoder e;
  e.patch_embed = Conv2dParams::make(ps, "encoder.patch_embed", cfg.patch, 3, W, rng);
  e.pos = ps.add("encoder.pos", Tensor::randn({g * g, W}, rng, 0.02));
  for (int i = 0; i < ec.depth; ++i) {
    const std::string n = "encoder.block" + std::to_string(i);
    EncoderBlock b;
    b.ln1 = LayerNormParams::make(ps, n + ".ln1", W);
    b.attn = AttentionParams::make(ps, n + ".attn", W, ec.heads, rng);
    b.proj = Linear::make(ps, n + ".proj", W, W, rng, 0.5);
    b.ln2 = LayerNormParams::make(ps, n + ".ln2", W);
    b.mlp = MlpParams::make(ps, n + ".mlp", W, ec.mlp_hidden, W, rng, 0.5);
    b.global = std::find(ec.global_blocks.begin(), ec.global_blocks.end(), i) != ec.global_blocks.end();
    e.blocks.push_back(std::move(b));
  }
  e.neck = Linear::make(ps, "encoder.neck", W, cfg.channels, rng);
  e.neck_ln = LayerNormParams::make(ps, "encoder.neck_ln", cfg.channels);
  return e;
}

PromptEncoder make_prompt(ParameterSet& ps, const ModelConfig& cfg, Rng& rng) {
  const auto C = cfg.channels;
  PromptEncoder p;
  p.label_embed = ps.add("prompt.label_embed", Tensor::randn({2, C}, rng, 1.0));
  p.no_mask = ps.add("prompt.no_mask", Tensor::randn({1, C}, rng, 0.02));
  p.mask_conv1 = Conv2dParams::make(ps, "prompt.mask_conv1", 2, 1, cfg.mask_hidden, rng);
  p.mask_ln = LayerNormParams::make(ps, "prompt.mask_ln", cfg.mask_hidden);
  p.mask_conv2 = Conv2dParams::make(ps, "prompt.mask_conv2", 2, cfg.mask_hidden, C, rng);
  return p;
}

Decoder make_decoder(ParameterSet& ps, const ModelConfig& cfg, Rng& rng) {
  const auto C = cfg.channels;
  const auto& dc = cfg.decoder;
  Decoder d;
  d.query = ps.add("decoder.query", Tensor::randn({1, C}, rng, 1.0));
  for (int i = 0; i < dc.blocks; ++i) {
    const std::string n = "decoder.block" + std::to_string(i);
    DecoderBlock b;
    b.self_attn = AttentionParams::make(ps, n + ".self_attn", C, dc.heads, rng);
    b.token_to_image = AttentionParams::make(ps, n + ".token_to_image", C, dc.heads, rng);
    b.image_to_token = AttentionParams::make(ps, n + ".image_to_token", C, dc.heads, rng);
    b.mlp = MlpParams::make(ps, n + ".mlp", C, dc.mlp_hidden, C, rng);
    b.ln1 = LayerNormParams::make(ps, n + ".ln1", C);
    b.ln2 = LayerNormParams::make(ps, n + ".ln2", C);
    b.ln3 = LayerNormParams::make(ps, n + ".ln3", C);
    b.ln4 = LayerNormParams::make(ps, n + ".ln4", C);
    d.blocks.push_back(std::move(b));
  }
  d.up1 = Conv2dParams::make(ps, "decoder.up1", 2, C, C, rng);
  d.up_ln = LayerNormParams::make(ps, "decoder.up_ln", C);
  d.up2 = Conv2dParams::make(ps, "decoder.up2", 2, C, C, rng);
  return d;
}

std::vector<std::int64_t> all_window_rows(std::int64_t g, int S) {
  const auto [wr, wc] = dwin::window_grid(g, g, S);
  std::vector<std::int64_t> rows;
  for (int r = 0; r < wr; ++r)
    for (int c = 0; c < wc; ++c) {
      const auto w = dwin::window_rows(g, g, S, {}, {r, c});
      rows.insert(rows.end(), w.begin(), w.end());
    }
  return rows;
}

}  // namespace

std::shared_ptr<Model> Model::create(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::shared_ptr<Model> m(new Model());
  m->config_ = cfg;
  Rng rng(seed);
  m->encoder_ = make_encoder(m->params_, cfg, rng);
  m->prompt_ = make_prompt(m->params_, cfg, rng);
  m->decoder_ = make_decoder(m->params_, cfg, rng);
  m->refiner_ = refiner::FocusRefiner::make(m->params_, "refiner", cfg.refiner, rng);
  return m;
}

void Model::save(const std::string& path) const { write_checkpoint(path, make_checkpoint(config_, params_)); }

std::shared_ptr<Model> Model::load(const std::string& path, const std::optional<refiner::Config>& refiner_override) {
  const Checkpoint ck = read_checkpoint(path);
  ModelConfig cfg = config_from_json(ck.config_json);
  std::vector<std::string> optional;
  if (refiner_override) {
    const auto& a = cfg.refiner;
    const auto& b = *refiner_override;
    const bool same_shape = a.channels == b.channels && a.depth == b.depth && a.window == b.window && a.heads == b.heads;
    cfg.refiner = b;
    if (!same_shape) optional.push_back("refiner.");
  }
  auto m = create(cfg, 0);
  if (!optional.empty()) {
    // Drop saved refiner blobs whose shapes no longer fit.
    Checkpoint filtered{ck.config_json, {}};
    for (const auto& b : ck.blobs)
      if (b.name.rfind("refiner.", 0) != 0) filtered.blobs.push_back(b);
    load_parameters(m->params_, filtered, optional);
  } else {
    load_parameters(m->params_, ck);
  }
  return m;
}

Tensor encode_image(const Model& m, const Tensor& image) {
  const auto& cfg = m.config();
  if (image.rank() != 3 || image.dim(0) != image.dim(1) || image.dim(2) != 3) {
    throw std::invalid_argument("encode_image expects a square [S, S, 3] image, got " + shape_str(image.shape()));
  }
  if (image.dim(0) != cfg.image_size) {
    throw std::invalid_argument("encode_image: input side " + std::to_string(image.dim(0)) + " != configured " +
                                std::to_string(cfg.image_size));
  }
  const auto& e = m.encoder();
  const std::int64_t g = cfg.grid(), W = cfg.encoder.width;
  const int S = cfg.encoder.window;
  Tensor x = conv2d(image, e.patch_embed.weight, e.patch_embed.bias, cfg.patch, 0);
  x = add(reshape(x, {g * g, W}), e.pos);
  const auto rows = all_window_rows(g, S);
  const std::int64_t n_windows = static_cast<std::int64_t>(rows.size()) / (S * S);
  for (const auto& b : e.blocks) {
    const Tensor y = b.ln1(x);
    Tensor a;
    if (b.global || (g <= S)) {
      a = b.attn(y, y, y);
    } else {
      const Tensor yw = reshape(gather_rows(y, rows), {n_windows, S * S, W});
      const Tensor aw = reshape(b.attn(yw, yw, yw), {n_windows * S * S, W});
      a = scatter_rows(Tensor({g * g, W}, 0.0), aw, rows);
    }
    x = add(x, b.proj(a));
    x = add(x, b.mlp(b.ln2(x)));
  }
  x = e.neck_ln(e.neck(x));
  return reshape(x, {g, g, cfg.channels});
}

Tensor sinusoidal_pe(const std::vector<std::pair<double, double>>& uv, std::int64_t channels) {
  if (channels % 4 != 0) throw std::invalid_argument("sinusoidal_pe: channels must be a multiple of 4");
  const std::int64_t nf = channels / 4;
  std::vector<double> out(uv.size() * static_cast<std::size_t>(channels));
  for (std::size_t i = 0; i < uv.size(); ++i) {
    double* row = out.data() + i * channels;
    for (std::int64_t f = 0; f < nf; ++f) {
      const double w = std::numbers::pi * std::exp2(6.0 * static_cast<double>(f) / static_cast<double>(nf));
      row[f] = std::sin(w * uv[i].first);
      row[nf + f] = std::cos(w * uv[i].first);
      row[2 * nf + f] = std::sin(w * uv[i].second);
      row[3 * nf + f] = std::cos(w * uv[i].second);
    }
  }
  return Tensor({static_cast<std::int64_t>(uv.size()), channels}, std::move(out));
}

Tensor image_pe(int grid, std::int64_t channels) {
  std::vector<std::pair<double, double>> uv;
  uv.reserve(static_cast<std::size_t>(grid) * grid);
  for (int i = 0; i < grid; ++i)
    for (int j = 0; j < grid; ++j) uv.emplace_back((j + 0.5) / grid, (i + 0.5) / grid);
  return sinusoidal_pe(uv, channels);
}

Tensor encode_clicks(const Model& m, const std::vector<Click>& clicks) {
  if (clicks.empty()) throw std::invalid_argument("encode_clicks: at least one click is required");
  const int S = m.config().image_size;
  std::vector<std::pair<double, double>> uv;
  std::vector<std::int64_t> labels;
  for (const auto& c : clicks) {
    if (c.x < 0 || c.y < 0 || c.x >= S || c.y >= S) {
      throw std::out_of_range("click (" + std::to_string(c.x) + ", " + std::to_string(c.y) +
                              ") outside the model input of side " + std::to_string(S));
    }
    uv.emplace_back((c.x + 0.5) / S, (c.y + 0.5) / S);
    labels.push_back(c.positive ? 1 : 0);
  }
  return add(sinusoidal_pe(uv, m.config().channels), gather_rows(m.prompt().label_embed, labels));
}

Tensor encode_mask(const Model& m, const Tensor& prev_logits) {
  const auto& cfg = m.config();
  const std::int64_t g = cfg.grid(), C = cfg.channels, L = cfg.logits_size();
  const auto& p = m.prompt();
  if (!prev_logits.defined()) return reshape(expand(p.no_mask, {g * g, C}), {g, g, C});
  if (prev_logits.shape() != Shape{L, L}) {
    throw std::invalid_argument("encode_mask: expected logits " + shape_str({L, L}) + ", got " +
                                shape_str(prev_logits.shape()));
  }
  Tensor x = conv2d(reshape(prev_logits, {L, L, 1}), p.mask_conv1.weight, p.mask_conv1.bias, 2, 0);
  x = relu(p.mask_ln(x));
  return conv2d(x, p.mask_conv2.weight, p.mask_conv2.bias, 2, 0);
}

Tensor mask_head(const Tensor& f_c, const Tensor& q_c) {
  if (f_c.rank() != 3 || q_c.rank() != 2 || q_c.dim(0) != 1 || q_c.dim(1) != f_c.dim(2)) {
    throw std::invalid_argument("mask_head: features " + shape_str(f_c.shape()) + " vs query " +
                                shape_str(q_c.shape()));
  }
  const auto H = f_c.dim(0), W = f_c.dim(1), C = f_c.dim(2);
  return reshape(matmul(reshape(f_c, {H * W, C}), transpose_last2(q_c)), {H, W});
}

DecodeResult decode(const Model& m, const Tensor& F, const Tensor& E, const Tensor& c) {
  const auto& cfg = m.config();
  const std::int64_t C = cfg.channels;
  if (F.rank() != 3 || F.dim(0) != F.dim(1) || F.dim(2) != C || E.shape() != F.shape()) {
    throw std::invalid_argument("decode: embedding " + shape_str(F.shape()) + " / mask embedding " +
                                shape_str(E.shape()) + " mismatch");
  }
  if (c.rank() != 2 || c.dim(0) < 1 || c.dim(1) != C) {
    throw std::invalid_argument("decode: click embeddings must be [N >= 1, " + std::to_string(C) + "], got " +
                                shape_str(c.shape()));
  }
  const auto g = F.dim(0);
  const auto& d = m.decoder();
  const Tensor P = image_pe(static_cast<int>(g), C);
  Tensor I = reshape(add(F, E), {g * g, C});
  const Tensor t0 = concat_rows({d.query, c});
  Tensor t = t0;
  for (const auto& b : d.blocks) {
    Tensor tq = add(t, t0);
    t = b.ln1(add(t, b.self_attn(tq, tq, t)));
    tq = add(t, t0);
    t = b.ln2(add(t, b.token_to_image(tq, add(I, P), I)));
    t = b.ln3(add(t, b.mlp(t)));
    tq = add(t, t0);
    I = b.ln4(add(I, b.image_to_token(add(I, P), tq, t)));
  }
  const Tensor q_c = slice_rows(t, 0, 1);
  Tensor u = conv_transpose2d(reshape(I, {g, g, C}), d.up1.weight, d.up1.bias);
  u = relu(d.up_ln(u));
  const Tensor f_c = relu(conv_transpose2d(u, d.up2.weight, d.up2.bias));
  return {mask_head(f_c, q_c), q_c, f_c};
}

DecodeResult predict(const Model& m, const Tensor& F, const std::vector<Click>& clicks, const Tensor& prev_logits) {
  return decode(m, F, encode_mask(m, prev_logits), encode_clicks(m, clicks));
}

// ---------------------------------------------------------------------------
// Checkpoint IO

namespace {

constexpr char kMagic[4] = {'F', 'R', 'C', 'K'};

void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("checkpoint truncated");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::string get_bytes(std::istream& is, std::uint32_t n) {
  if (n > (1u << 30)) throw std::runtime_error("checkpoint field too large");
  std::string s(n, '\0');
  if (n && !is.read(s.data(), n)) throw std::runtime_error("checkpoint truncated");
  return s;
}

}  // namespace

void write_checkpoint(const std::string& path, const Checkpoint& ck) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + tmp + " for writing");
    os.write(kMagic, 4);
    put_u32(os, kCheckpointVersion);
    put_u32(os, static_cast<std::uint32_t>(ck.config_json.size()));
    os.write(ck.config_json.data(), static_cast<std::streamsize>(ck.config_json.size()));
    put_u32(os, static_cast<std::uint32_t>(ck.blobs.size()));
    for (const auto& b : ck.blobs) {
      if (shape_numel(b.shape) != b.data.size()) throw std::invalid_argument("blob " + b.name + " size mismatch");
      put_u32(os, static_cast<std::uint32_t>(b.name.size()));
      os.write(b.name.data(), static_cast<std::streamsize>(b.name.size()));
      put_u32(os, static_cast<std::uint32_t>(b.shape.size()));
      for (auto d : b.shape) put_u32(os, static_cast<std::uint32_t>(d));
      for (float f : b.data) put_u32(os, std::bit_cast<std::uint32_t>(f));
    }
    if (!os) throw std::runtime_error("write failed: " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw std::runtime_error("cannot move checkpoint into " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw std::runtime_error(path + ": not a checkpoint");
  const auto version = get_u32(is);
  if (version != kCheckpointVersion) {
    throw std::runtime_error(path + ": unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  ck.config_json = get_bytes(is, get_u32(is));
  const auto count = get_u32(is);
  for (std::uint32_t i = 0; i < count; ++i) {
    Blob b;
    b.name = get_bytes(is, get_u32(is));
    const auto rank = get_u32(is);
    if (rank > 8) throw std::runtime_error("blob " + b.name + ": bad rank");
    for (std::uint32_t r = 0; r < rank; ++r) b.shape.push_back(get_u32(is));
    const auto n = shape_numel(b.shape);
    if (n > (1u << 30)) throw std::runtime_error("blob " + b.name + ": too large");
    b.data.resize(n);
    for (auto& f : b.data) f = std::bit_cast<float>(get_u32(is));
    ck.blobs.push_back(std::move(b));
  }
  return ck;
}

std::size_t load_parameters(ParameterSet& ps, const Checkpoint& ck, const std::vector<std::string>& optional_prefixes) {
  std::size_t loaded = 0;
  for (const auto& [name, t] : ps.entries()) {
    const auto it = std::find_if(ck.blobs.begin(), ck.blobs.end(), [&](const Blob& b) { return b.name == name; });
    if (it == ck.blobs.end()) {
      const bool optional = std::any_of(optional_prefixes.begin(), optional_prefixes.end(),
                                        [&](const std::string& p) { return name.rfind(p, 0) == 0; });
      if (optional) continue;
      throw std::runtime_error("checkpoint is missing parameter " + name);
    }
    if (it->shape != t.shape()) {
      throw std::runtime_error("checkpoint parameter " + name + " has shape " + shape_str(it->shape) + ", expected " +
                               shape_str(t.shape()));
    }
    Tensor dst = t;
    auto out = dst.mutable_data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = it->data[i];
    ++loaded;
  }
  return loaded;
}

Checkpoint make_checkpoint(const ModelConfig& cfg, const ParameterSet& ps) {
  Checkpoint ck;
  ck.config_json = config_to_json(cfg);
  for (const auto& [name, t] : ps.entries()) {
    Blob b{name, t.shape(), {}};
    b.data.reserve(t.numel());
    for (double v : t.data()) b.data.push_back(static_cast<float>(v));
    ck.blobs.push_back(std::move(b));
  }
  return ck;
}

}  // namespace focrefine::samlite
