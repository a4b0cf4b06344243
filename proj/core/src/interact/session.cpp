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

#include "focrefine/interact/session.hpp"

#include <chrono>
#include <stdexcept>

namespace focrefine::interact {

Session::Session(std::shared_ptr<const samlite::Model> model, Tensor embedding, SessionOptions opts)
    : model_(std::move(model)), embedding_(std::move(embedding)), opts_(opts) {
  if (!model_) throw std::invalid_argument("session needs a model");
  if (opts_.refine_step < 1) throw std::invalid_argument("refine step K must be >= 1");
  const auto& cfg = model_->config();
  if (embedding_.shape() != Shape{cfg.grid(), cfg.grid(), cfg.channels}) {
    throw std::invalid_argument("session embedding " + shape_str(embedding_.shape()) + " does not match the model");
  }
}

StepResult Session::step(const Click& click) {
  if (closed_) throw std::logic_error("session is closed");
  const auto& cfg = model_->config();
  if (click.x < 0 || click.y < 0 || click.x >= cfg.image_size || click.y >= cfg.image_size) {
    throw std::out_of_range("click outside the model input");
  }
  NoGradScope no_grad;
  clicks_.push_back(click);
  StepResult res;
  res.click_index = static_cast<int>(clicks_.size());
  if (opts_.use_refiner && !refine_done_ && res.click_index == opts_.refine_step) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::pair<int, int>> cells;
    for (const auto& c : clicks_) cells.emplace_back(c.y / cfg.patch, c.x / cfg.patch);
    const Tensor q = prev_query_.defined() ? prev_query_ : model_->decoder().query;
    embedding_ = refiner::focus_refine(embedding_, prev_logits_, q, model_->refiner(), cells);
    refine_done_ = true;
    ++refiner_invocations_;
    res.refined_now = true;
    res.refine_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
  auto out = samlite::predict(*model_, embedding_, clicks_, prev_logits_);
  prev_logits_ = out.logits;
  prev_query_ = out.q_c;
  res.logits = out.logits;
  return res;
}

BinaryMask prediction_mask(const Tensor& logits, const samlite::InputFrame& frame) {
  return samlite::binarize(samlite::logits_to_original(logits, frame));
}

evalbench::MetricsRecord simulate_loop(const BinaryMask& gt, const StepFn& step, int max_clicks, OracleMode mode,
                                       std::uint64_t seed) {
  if (max_clicks < 1) throw std::invalid_argument("max_clicks must be >= 1");
  Rng rng(seed);
  evalbench::MetricsRecord rec;
  BinaryMask pred(gt.height, gt.width);
  for (int i = 0; i < max_clicks; ++i) {
    const auto next = next_click(pred, gt, mode, rng);
    if (!next) break;
    const auto t0 = std::chrono::steady_clock::now();
    pred = step(next->click);
    rec.seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    rec.ious.push_back(evalbench::iou(pred, gt));
  }
  return rec;
}

evalbench::MetricsRecord run_simulation(std::shared_ptr<const samlite::Model> model, const Tensor& embedding,
                                        const samlite::InputFrame& frame, const BinaryMask& gt,
                                        const SimulationOptions& opts, const std::string& sample_id) {
  if (gt.height != frame.orig_h || gt.width != frame.orig_w) {
    throw std::invalid_argument("ground truth does not match the image frame");
  }
  Session s(std::move(model), embedding, opts.session);
  int refine_step = 0;
  auto rec = simulate_loop(
      gt,
      [&](const Click& c) {
        const auto r = s.step(frame.to_model(c.x, c.y, c.positive));
        if (r.refined_now) refine_step = r.click_index;
        return prediction_mask(r.logits, frame);
      },
      opts.max_clicks, opts.mode, opts.seed);
  rec.sample_id = sample_id;
  rec.refine_step = refine_step;
  return rec;
}

}  // namespace focrefine::interact
