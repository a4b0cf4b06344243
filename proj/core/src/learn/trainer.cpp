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

#include "focrefine/learn/trainer.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <memory>
#include <numeric>
#include <random>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "focrefine/evalbench/metrics.hpp"
#include "focrefine/interact/oracle.hpp"
#include "focrefine/interact/session.hpp"
#include "focrefine/learn/losses.hpp"
#include "focrefine/learn/sampling.hpp"
#include "focrefine/samlite/image.hpp"

namespace focrefine::learn {

void TrainConfig::validate() const {
  if (stage != 1 && stage != 2) throw std::invalid_argument("stage must be 1 or 2");
  if (steps < 1) throw std::invalid_argument("steps must be >= 1");
  if (batch < 1) throw std::invalid_argument("batch must be >= 1");
  if (max_clicks < 1) throw std::invalid_argument("max_clicks must be >= 1");
  for (double g : {gamma_click_coarse, gamma_click_fine, gamma_refine_coarse, gamma_refine_fine}) {
    if (!(g > 0.0 && g < 1.0)) throw std::invalid_argument("decay coefficients must lie in (0, 1)");
  }
  if (ptl_weight < 0.0) throw std::invalid_argument("ptl weight must be >= 0");
  if (schedule.peak <= 0.0 || schedule.floor < 0.0 || schedule.warmup < 0) {
    throw std::invalid_argument("invalid learning-rate schedule");
  }
}

std::string to_json_line(const LogRecord& r) {
  nlohmann::ordered_json j;
  j["step"] = r.step;
  j["stage"] = r.stage;
  j["nfl"] = r.nfl;
  j["ptl"] = r.ptl;
  j["lr"] = r.lr;
  j["iou_probe"] = r.iou_probe ? nlohmann::ordered_json(*r.iou_probe) : nlohmann::ordered_json(nullptr);
  return j.dump();
}

std::vector<std::string> trainable_prefixes(int stage) {
  if (stage == 1) return {"encoder.", "prompt.", "decoder."};
  if (stage == 2) return {"refiner."};
  throw std::invalid_argument("stage must be 1 or 2");
}

namespace {

bool has_any_prefix(const std::string& name, const std::vector<std::string>& prefixes) {
  return std::any_of(prefixes.begin(), prefixes.end(), [&](const auto& p) { return name.rfind(p, 0) == 0; });
}

std::string checksum_of(const ParameterSet& ps, const std::vector<std::string>& prefixes) {
  std::string out;
  for (const auto& p : prefixes) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%s%016llx", out.empty() ? "" : ":",
                  static_cast<unsigned long long>(ps.checksum(p)));
    out += buf;
  }
  return out;
}

// Restores requires_grad flags on scope exit.
class FreezeGuard {
 public:
  FreezeGuard(ParameterSet& ps, const std::vector<std::string>& trainable) {
    for (const auto& [name, t] : ps.entries()) {
      saved_.emplace_back(t, t.requires_grad());
      Tensor(t).set_requires_grad(has_any_prefix(name, trainable));
    }
  }
  ~FreezeGuard() {
    for (auto& [t, flag] : saved_) t.set_requires_grad(flag);
  }
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

 private:
  std::vector<std::pair<Tensor, bool>> saved_;
};

RgbImage flip_image(const RgbImage& img) {
  RgbImage out(img.height, img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y, img.width - 1 - x, c);
  return out;
}

BinaryMask flip_mask(const BinaryMask& m) {
  BinaryMask out(m.height, m.width);
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) out.at(y, x) = m.at(y, m.width - 1 - x);
  return out;
}

// Ground truth placed in the model-input frame (nearest source pixel, zero
// in the padding), then reduced to logits resolution.
Tensor target_at_logits(const BinaryMask& gt, const samlite::InputFrame& frame, int logits_size) {
  BinaryMask in(frame.input_size, frame.input_size);
  for (int y = 0; y < frame.input_size; ++y) {
    const int sy = static_cast<int>((y + 0.5) / frame.scale);
    if (sy >= gt.height) continue;
    for (int x = 0; x < frame.input_size; ++x) {
      const int sx = static_cast<int>((x + 0.5) / frame.scale);
      if (sx < gt.width) in.at(y, x) = gt.at(sy, sx);
    }
  }
  return samlite::downsample_mask(in, logits_size);
}

struct Episode {
  Tensor image;
  samlite::InputFrame frame;
  BinaryMask gt;
  Tensor target;
  bool fine = false;
};

struct EpisodeLoss {
  double nfl = 0.0;
  double ptl = 0.0;
};

std::vector<PtlPoint> ptl_points(const std::vector<Click>& clicks, const samlite::ModelConfig& mc) {
  std::vector<PtlPoint> pts;
  for (const auto& c : clicks) pts.push_back(to_map_coords(c.x, c.y, c.positive, mc.image_size, mc.logits_size()));
  return pts;
}

class Trainer {
 public:
  Trainer(samlite::Model& m, const synthdata::Dataset& d, const TrainConfig& c)
      : model_(m), data_(d), cfg_(c), rng_(c.seed) {}

  EpisodeLoss run_episode(const Episode& ep, double loss_scale) {
    const auto& mc = model_.config();
    const double g_click = ep.fine ? cfg_.gamma_click_fine : cfg_.gamma_click_coarse;
    const int n = sample_click_count(g_click, cfg_.max_clicks, rng_);
    const int K = cfg_.stage == 2
                      ? sample_refine_step(ep.fine ? cfg_.gamma_refine_fine : cfg_.gamma_refine_coarse, n, rng_)
                      : 0;

    GradTape tape;
    TapeScope scope(tape);
    Tensor F;
    if (cfg_.stage == 1) {
      F = samlite::encode_image(model_, ep.image);
    } else {
      NoGradScope ng;
      F = samlite::encode_image(model_, ep.image);
    }
    Tensor F_live = F;  // carries gradient to the final decode
    Tensor F_sim = F.detach();
    std::vector<Click> clicks;
    Tensor prev_logits, prev_q;
    BinaryMask pred(ep.gt.height, ep.gt.width);
    for (int i = 1; i <= n; ++i) {
      const auto next = interact::next_click(pred, ep.gt, interact::OracleMode::kRandom, rng_);
      if (!next) break;
      clicks.push_back(ep.frame.to_model(next->click.x, next->click.y, next->click.positive));
      if (i == K) {
        std::vector<std::pair<int, int>> cells;
        for (const auto& c : clicks) cells.emplace_back(c.y / mc.patch, c.x / mc.patch);
        const Tensor q = prev_q.defined() ? prev_q : model_.decoder().query;
        F_live = refiner::focus_refine(F_sim, prev_logits, q, model_.refiner(), cells);
        F_sim = F_live.detach();
      }
      if (i == n) break;
      NoGradScope ng;
      auto out = samlite::predict(model_, F_sim, clicks, prev_logits);
      prev_logits = out.logits;
      prev_q = out.q_c;
      pred = interact::prediction_mask(prev_logits, ep.frame);
    }
    // In stage 2 an episode that stops before K never reaches the refiner.
    if (cfg_.stage == 2 && K > static_cast<int>(clicks.size())) {
      std::vector<std::pair<int, int>> cells;
      for (const auto& c : clicks) cells.emplace_back(c.y / mc.patch, c.x / mc.patch);
      const Tensor q = prev_q.defined() ? prev_q : model_.decoder().query;
      F_live = refiner::focus_refine(F_sim, prev_logits, q, model_.refiner(), cells);
    }
    const auto out = samlite::predict(model_, F_live, clicks, prev_logits);
    const Tensor nfl = nfl_loss(out.logits, ep.target);
    const Tensor ptl = ptl_loss(sigmoid(out.logits), ptl_points(clicks, mc));
    const Tensor total = scale(add(nfl, scale(ptl, cfg_.ptl_weight)), loss_scale);
    backward(total, tape);
    return {nfl.item(), ptl.item()};
  }

  Episode make_episode(std::size_t idx) {
    const auto& s = data_.samples[idx];
    const auto& img = data_.images[s.image];
    const bool flip = cfg_.hflip && std::bernoulli_distribution(0.5)(rng_);
    Episode ep;
    auto pre = samlite::preprocess(flip ? flip_image(img) : img, model_.config().image_size);
    ep.image = pre.image;
    ep.frame = pre.frame;
    ep.gt = flip ? flip_mask(s.gt) : s.gt;
    ep.target = target_at_logits(ep.gt, ep.frame, model_.config().logits_size());
    ep.fine = s.contrast <= cfg_.fine_contrast;
    return ep;
  }

  TrainResult run(const StepCallback& on_step) {
    if (data_.samples.empty()) throw std::invalid_argument("training data has no samples");
    const auto trainable = trainable_prefixes(cfg_.stage);
    const auto frozen = trainable_prefixes(cfg_.stage == 1 ? 2 : 1);
    auto& ps = model_.params();
    FreezeGuard guard(ps, trainable);
    ps.zero_grad();
    std::vector<std::pair<std::string, Tensor>> opt_params;
    for (const auto& [name, t] : ps.entries())
      if (has_any_prefix(name, trainable)) opt_params.emplace_back(name, t);
    AdamW opt(std::move(opt_params), cfg_.optim);

    std::ofstream log;
    if (!cfg_.log_path.empty()) {
      log.open(cfg_.log_path, std::ios::trunc);
      if (!log) throw std::runtime_error("cannot open training log " + cfg_.log_path);
    }
    std::vector<std::size_t> probe;
    {
      Rng prng(cfg_.seed ^ 0x9e3779b97f4a7c15ULL);
      std::vector<std::size_t> all(data_.samples.size());
      std::iota(all.begin(), all.end(), 0);
      std::shuffle(all.begin(), all.end(), prng);
      all.resize(std::min<std::size_t>(all.size(), static_cast<std::size_t>(std::max(cfg_.probe_samples, 0))));
      probe = std::move(all);
    }

    TrainResult result;
    const std::string frozen_before = checksum_of(ps, frozen);
    std::vector<std::size_t> order;
    std::size_t cursor = 0;
    for (int step = 0; step < cfg_.steps; ++step) {
      LogRecord rec;
      rec.step = step + 1;
      rec.stage = cfg_.stage;
      rec.lr = cfg_.schedule.at(step);
      for (int b = 0; b < cfg_.batch; ++b) {
        if (cursor == order.size()) {
          order.resize(data_.samples.size());
          std::iota(order.begin(), order.end(), 0);
          std::shuffle(order.begin(), order.end(), rng_);
          cursor = 0;
        }
        const auto ep = make_episode(order[cursor++]);
        const auto l = run_episode(ep, 1.0 / cfg_.batch);
        rec.nfl += l.nfl / cfg_.batch;
        rec.ptl += l.ptl / cfg_.batch;
      }
      for (const auto& [name, t] : ps.entries()) {
        if (!has_any_prefix(name, trainable) && t.has_grad()) {
          throw FreezeViolation("frozen parameter " + name + " received a gradient in stage " +
                                std::to_string(cfg_.stage));
        }
      }
      opt.step(rec.lr);
      if (cfg_.probe_every > 0 && !probe.empty() && (rec.step % cfg_.probe_every == 0 || rec.step == cfg_.steps)) {
        rec.iou_probe = iou_probe(model_, data_, probe, cfg_.probe_clicks, cfg_.stage == 2);
      }
      result.log.push_back(rec);
      if (log && (rec.step % std::max(cfg_.log_every, 1) == 0 || rec.iou_probe || rec.step == cfg_.steps)) {
        log << to_json_line(rec) << '\n' << std::flush;
      }
      if (on_step) on_step(rec);
      if (!cfg_.checkpoint_path.empty() && cfg_.checkpoint_every > 0 && rec.step % cfg_.checkpoint_every == 0) {
        model_.save(cfg_.checkpoint_path);
      }
    }
    result.frozen_checksum = checksum_of(ps, frozen);
    if (result.frozen_checksum != frozen_before) {
      throw FreezeViolation("frozen parameters changed during stage " + std::to_string(cfg_.stage));
    }
    result.trained_checksum = checksum_of(ps, trainable);
    if (!cfg_.checkpoint_path.empty()) model_.save(cfg_.checkpoint_path);
    return result;
  }

 private:
  samlite::Model& model_;
  const synthdata::Dataset& data_;
  TrainConfig cfg_;
  Rng rng_;
};

}  // namespace

TrainResult train(samlite::Model& model, const synthdata::Dataset& data, const TrainConfig& cfg,
                  const StepCallback& on_step) {
  cfg.validate();
  return Trainer(model, data, cfg).run(on_step);
}

double iou_probe(const samlite::Model& model, const synthdata::Dataset& data, const std::vector<std::size_t>& samples,
                 int clicks, bool use_refiner) {
  if (samples.empty()) throw std::invalid_argument("iou probe needs at least one sample");
  // Non-owning handle; the caller keeps the model alive for the call.
  std::shared_ptr<const samlite::Model> handle(&model, [](const samlite::Model*) {});
  NoGradScope ng;
  std::vector<evalbench::MetricsRecord> recs;
  for (std::size_t idx : samples) {
    const auto& s = data.samples.at(idx);
    const auto pre = samlite::preprocess(data.images.at(s.image), model.config().image_size);
    const Tensor F = samlite::encode_image(model, pre.image);
    interact::SimulationOptions so;
    so.max_clicks = clicks;
    so.session.use_refiner = use_refiner;
    so.session.refine_step = 1;
    recs.push_back(interact::run_simulation(handle, F, pre.frame, s.gt, so));
  }
  return evalbench::mean_iou_at(recs, clicks);
}

}  // namespace focrefine::learn
