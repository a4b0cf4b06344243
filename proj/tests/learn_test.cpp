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

#include <gtest/gtest.h>

#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "focrefine/learn/losses.hpp"
#include "focrefine/learn/optim.hpp"
#include "focrefine/learn/sampling.hpp"
#include "focrefine/learn/trainer.hpp"
#include "focrefine/samlite/image.hpp"
#include "focrefine/synthdata/scene.hpp"
#include "support/gradcheck.hpp"
#include "support/tiny_model.hpp"

using namespace focrefine;
using namespace focrefine::learn;

namespace {

Tensor zeros(const Shape& s) { return Tensor(s, std::vector<double>(shape_numel(s), 0.0)); }

Tensor random_logits(Shape s, Rng& rng, double sd = 2.0) {
  std::normal_distribution<double> n(0.0, sd);
  std::vector<double> v(shape_numel(s));
  for (auto& x : v) x = n(rng);
  return Tensor(s, v);
}

Tensor random_target(Shape s, Rng& rng) {
  std::bernoulli_distribution b(0.4);
  std::vector<double> v(shape_numel(s));
  for (auto& x : v) x = b(rng) ? 1.0 : 0.0;
  return Tensor(s, v);
}

// Direct per-pixel form of the normalized focal loss.
double nfl_oracle(const std::vector<double>& x, const std::vector<double>& t, double gamma) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double p = 1.0 / (1.0 + std::exp(-x[i]));
    const double pt = t[i] == 1.0 ? p : 1.0 - p;
    const double w = std::pow(1.0 - pt, gamma);
    num += w * -std::log(pt);
    den += w;
  }
  return num / den;
}

Tensor map_from(int h, int w, const std::vector<double>& v) { return Tensor({h, w}, v); }

// Small dataset at the tiny model's input size.
synthdata::Dataset tiny_dataset(int images, std::uint64_t seed) {
  synthdata::Dataset d;
  for (int i = 0; i < images; ++i) {
    synthdata::SceneSpec spec;
    spec.seed = seed + static_cast<std::uint64_t>(i);
    spec.height = spec.width = 32;
    spec.object_count = 1;
    spec.contrast = i % 2 == 0 ? 0.3 : 1.0;
    auto scene = synthdata::generate_scene(spec);
    d.image_ids.push_back(std::to_string(i));
    d.images.push_back(scene.image);
    d.samples.push_back({static_cast<std::size_t>(i), 0, spec.contrast, scene.masks.at(0)});
  }
  return d;
}

TrainConfig tiny_train_config(int stage, int steps) {
  TrainConfig c;
  c.stage = stage;
  c.steps = steps;
  c.batch = 2;
  c.max_clicks = 4;
  c.schedule = {1e-3, 1e-4, 2, steps, 1.0};
  c.probe_every = 0;
  c.seed = 11;
  return c;
}

}  // namespace

// ----------------------------------------------------------------------------
// Normalized focal loss

TEST(NflLoss, ConfidentCorrectPredictionIsNearZero) {
  Rng rng(1);
  const Tensor t = random_target({8, 8}, rng);
  std::vector<double> x(t.data().begin(), t.data().end());
  for (auto& v : x) v = v == 1.0 ? 20.0 : -20.0;
  EXPECT_LT(nfl_loss(Tensor({8, 8}, x), t).item(), 1e-6);
}

TEST(NflLoss, ZeroLogitsGiveLogTwo) {
  Rng rng(2);
  const Tensor t = random_target({5, 7}, rng);
  EXPECT_NEAR(nfl_loss(zeros({5, 7}), t).item(), std::log(2.0), 1e-12);
}

TEST(NflLoss, MatchesPerPixelOracleOnRandomGrids) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor x = random_logits({4, 4}, rng);
    const Tensor t = random_target({4, 4}, rng);
    const std::vector<double> xv(x.data().begin(), x.data().end()), tv(t.data().begin(), t.data().end());
    EXPECT_NEAR(nfl_loss(x, t).item(), nfl_oracle(xv, tv, 2.0), 1e-6);
  }
}

TEST(NflLoss, NonNegativeAndZeroOnlyWhenCertainAndCorrect) {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const Tensor x = random_logits({6, 6}, rng, 4.0);
    const Tensor t = random_target({6, 6}, rng);
    EXPECT_GT(nfl_loss(x, t).item(), 0.0);
  }
}

TEST(NflLoss, GradientMatchesFiniteDifferences) {
  Rng rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor x = random_logits({5, 5}, rng);
    const Tensor t = random_target({5, 5}, rng);
    const auto r = focrefine::testing::finite_difference_check([&] { return nfl_loss(x, t); }, {x});
    EXPECT_LT(r.max_rel_error, 1e-5);
  }
}

TEST(NflLoss, Rejects) {
  EXPECT_THROW(nfl_loss(zeros({0, 3}), zeros({0, 3})), std::invalid_argument);
  EXPECT_THROW(nfl_loss(zeros({2, 3}), zeros({3, 2})), std::invalid_argument);
  EXPECT_THROW(nfl_loss(zeros({1, 2}), Tensor({1, 2}, {0.0, 0.5})), std::invalid_argument);
}

// ----------------------------------------------------------------------------
// Point target loss

TEST(PtlLoss, SingleClickContributions) {
  const Tensor ones = map_from(2, 2, {1, 1, 1, 1});
  const Tensor zeros = map_from(2, 2, {0, 0, 0, 0});
  EXPECT_DOUBLE_EQ(ptl_loss(ones, {{1, 0, 1}}).item(), 0.0);
  EXPECT_DOUBLE_EQ(ptl_loss(zeros, {{1, 0, 1}}).item(), 1.0);
}

TEST(PtlLoss, ThreeClickArithmetic) {
  const Tensor m = map_from(1, 3, {0.2, 0.9, 0.5});
  EXPECT_NEAR(ptl_loss(m, {{0, 0, 0}, {1, 0, 1}, {2, 0, 1}}).item(), 0.30, 1e-12);
}

TEST(PtlLoss, ZeroExactlyWhenEveryClickIsMatched) {
  const Tensor m = map_from(3, 3, {0, 0, 0, 0, 1, 1, 0, 1, 1});
  EXPECT_DOUBLE_EQ(ptl_loss(m, {{1, 1, 1}, {2, 2, 1}, {0, 0, 0}}).item(), 0.0);
  EXPECT_GT(ptl_loss(m, {{1, 1, 1}, {0.5, 0.5, 1}}).item(), 0.0);
  EXPECT_DOUBLE_EQ(ptl_loss(m, {}).item(), 0.0);
}

TEST(PtlLoss, BilinearBetweenPixels) {
  const Tensor m = map_from(1, 2, {0.0, 1.0});
  EXPECT_NEAR(ptl_loss(m, {{0.25, 0, 1}}).item(), 0.75 * 0.75, 1e-12);
  // Half a pixel beyond the last center reads the border value.
  EXPECT_NEAR(ptl_loss(m, {{1.5, -0.5, 0}}).item(), 1.0, 1e-12);
}

TEST(PtlLoss, GradientMatchesFiniteDifferences) {
  Rng rng(6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(20);
  for (auto& x : v) x = u(rng);
  Tensor m({4, 5}, v);
  const std::vector<PtlPoint> pts{{0.3, 1.7, 1}, {3.9, 2.2, 0}, {2.0, 0.0, 1}};
  const auto r = focrefine::testing::finite_difference_check([&] { return ptl_loss(m, pts); }, {m});
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(PtlLoss, Rejects) {
  const Tensor m = map_from(2, 2, {0, 0, 0, 0});
  EXPECT_THROW(ptl_loss(m, {{2.0, 0, 1}}), std::out_of_range);
  EXPECT_THROW(ptl_loss(m, {{0, -0.6, 1}}), std::out_of_range);
  EXPECT_THROW(ptl_loss(m, {{0, 0, 2}}), std::invalid_argument);
  EXPECT_THROW(ptl_loss(zeros({4}), {{0, 0, 1}}), std::invalid_argument);
}

TEST(PtlLoss, MapCoordinatesKeepPixelCenters) {
  const auto p = to_map_coords(0, 127, true, 128, 64);
  EXPECT_DOUBLE_EQ(p.x, -0.25);
  EXPECT_DOUBLE_EQ(p.y, 63.25);
  EXPECT_EQ(p.z, 1);
  const auto q = to_map_coords(10, 20, false, 64, 64);
  EXPECT_DOUBLE_EQ(q.x, 10.0);
  EXPECT_DOUBLE_EQ(q.y, 20.0);
  EXPECT_EQ(q.z, 0);
}

// ----------------------------------------------------------------------------
// Click-count and refine-step sampling

TEST(Sampling, TwoPointNormalization) {
  const auto p = decay_probabilities(0.6, 2);
  EXPECT_DOUBLE_EQ(p[0], 1.0 / 1.6);
  EXPECT_NEAR(p[0], 0.625, 1e-15);
  EXPECT_NEAR(p[1], 0.375, 1e-15);
  EXPECT_NEAR(decay_probabilities(0.35, 2)[0], 0.7407, 1e-4);
}

TEST(Sampling, StrictlyDecreasingAndNormalized) {
  for (double g : {0.05, 0.35, 0.6, 0.9, 0.999}) {
    const auto p = decay_probabilities(g, 20);
    double total = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      total += p[i];
      if (i > 0) EXPECT_LT(p[i], p[i - 1]);
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Sampling, DegenerateRefineSupport) {
  Rng rng(7);
  for (int i = 0; i < 1000; ++i) EXPECT_EQ(sample_refine_step(0.35, 1, rng), 1);
}

TEST(Sampling, Rejects) {
  Rng rng(8);
  for (double g : {0.0, 1.0, -0.2, 1.5, std::nan("")}) {
    EXPECT_THROW(sample_click_count(g, 20, rng), std::invalid_argument);
    EXPECT_THROW(sample_refine_step(g, 3, rng), std::invalid_argument);
  }
  EXPECT_THROW(sample_refine_step(0.6, 0, rng), std::invalid_argument);
  EXPECT_THROW(sample_click_count(0.6, 0, rng), std::invalid_argument);
}

namespace {

// Pearson chi-square over `draws` samples, plus a 3-sigma binomial bound on
// every bin.
void frequency_check(const std::function<int(Rng&)>& draw, const std::vector<double>& p, int draws,
                     std::uint64_t seed) {
  Rng rng(seed);
  std::vector<long> counts(p.size(), 0);
  for (int i = 0; i < draws; ++i) {
    const int k = draw(rng);
    ASSERT_GE(k, 1);
    ASSERT_LE(k, static_cast<int>(p.size()));
    ++counts[k - 1];
  }
  // Merge the sparse tail so every expected count is at least 5.
  double stat = 0.0, tail_obs = 0.0, tail_exp = 0.0;
  int bins = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double e = p[i] * draws;
    const double sigma = std::sqrt(draws * p[i] * (1.0 - p[i]));
    EXPECT_LE(std::abs(counts[i] - e), 3.0 * sigma + 1.0) << "bin " << i + 1;
    if (e >= 5.0) {
      stat += (counts[i] - e) * (counts[i] - e) / e;
      ++bins;
    } else {
      tail_obs += counts[i];
      tail_exp += e;
    }
  }
  if (tail_exp > 0.0) {
    stat += (tail_obs - tail_exp) * (tail_obs - tail_exp) / tail_exp;
    ++bins;
  }
  const boost::math::chi_squared dist(bins - 1);
  EXPECT_LT(stat, boost::math::quantile(dist, 0.999));
}

}  // namespace

TEST(Sampling, ClickCountFrequenciesMatchOverAMillionDraws) {
  for (double g : {0.6, 0.9}) {
    frequency_check([g](Rng& r) { return sample_click_count(g, 20, r); }, decay_probabilities(g, 20), 1000000,
                    100 + static_cast<std::uint64_t>(g * 10));
  }
}

TEST(Sampling, RefineStepFrequenciesMatchOverAMillionDraws) {
  frequency_check([](Rng& r) { return sample_refine_step(0.35, 6, r); }, decay_probabilities(0.35, 6), 1000000, 200);
  frequency_check([](Rng& r) { return sample_refine_step(0.6, 2, r); }, decay_probabilities(0.6, 2), 1000000, 201);
}

// ----------------------------------------------------------------------------
// Optimizer and schedule

TEST(Schedule, Endpoints) {
  const LrSchedule s{2e-3, 1e-5, 50, 2000, 1.0};
  EXPECT_DOUBLE_EQ(s.at(0), 1e-5);
  EXPECT_DOUBLE_EQ(s.at(50), 2e-3);
  EXPECT_DOUBLE_EQ(s.at(2000), 0.0);
  EXPECT_NEAR(s.at(1025), 1e-3, 1e-15);
  for (int i = 1; i <= 50; ++i) EXPECT_GT(s.at(i), s.at(i - 1));
  for (int i = 51; i <= 2000; ++i) EXPECT_LT(s.at(i), s.at(i - 1));
  EXPECT_THROW(s.at(-1), std::invalid_argument);
}

TEST(Schedule, PolynomialPower) {
  const LrSchedule s{1.0, 0.0, 0, 100, 2.0};
  EXPECT_DOUBLE_EQ(s.at(50), 0.25);
}

TEST(AdamW, FrozenParametersStayBitIdentical) {
  Rng rng(9);
  Tensor trained = random_logits({3, 4}, rng).set_requires_grad(true);
  Tensor frozen = random_logits({4, 2}, rng).set_requires_grad(true);
  const std::vector<double> before(frozen.data().begin(), frozen.data().end());
  const std::vector<double> trained_before(trained.data().begin(), trained.data().end());
  AdamW opt({{"trained", trained}});
  GradTape tape;
  Tensor loss;
  {
    TapeScope scope(tape);
    loss = sum(matmul(trained, frozen));
  }
  backward(loss, tape);
  ASSERT_TRUE(frozen.has_grad());
  opt.step(1e-2);
  EXPECT_EQ(std::vector<double>(frozen.data().begin(), frozen.data().end()), before);
  EXPECT_NE(std::vector<double>(trained.data().begin(), trained.data().end()), trained_before);
}

TEST(AdamW, FirstStepMovesEachWeightByTheLearningRate) {
  // With bias correction the first update is lr * g / (|g| + eps) per element.
  Tensor w = Tensor({1, 3}, {1.0, -2.0, 0.5}).set_requires_grad(true);
  AdamWOptions o;
  o.weight_decay = 0.0;
  o.clip_norm = 0.0;
  AdamW opt({{"w", w}}, o);
  GradTape tape;
  Tensor loss;
  {
    TapeScope scope(tape);
    loss = sum(mul(w, Tensor({1, 3}, {3.0, -1.0, 0.0})));
  }
  backward(loss, tape);
  opt.step(0.1);
  EXPECT_NEAR(w.data()[0], 0.9, 1e-7);
  EXPECT_NEAR(w.data()[1], -1.9, 1e-7);
  EXPECT_DOUBLE_EQ(w.data()[2], 0.5);
  EXPECT_FALSE(w.has_grad() && w.grad()[0] != 0.0);
}

// ----------------------------------------------------------------------------
// Training driver

TEST(Train, OverfitOneSampleLossDecreasesMonotonically) {
  auto m = samlite::Model::create(focrefine::testing::tiny_config(), 21);
  const auto data = tiny_dataset(1, 500);
  const auto pre = samlite::preprocess(data.images[0], m->config().image_size);
  const auto& gt = data.samples[0].gt;
  const int L = m->config().logits_size();
  const Tensor target = samlite::downsample_mask(gt, L);
  // Fixed episode: one positive click at the object's first pixel.
  Click c{};
  for (int y = 0; y < gt.height && c.x == 0; ++y)
    for (int x = 0; x < gt.width; ++x)
      if (gt.at(y, x)) {
        c = {x, y, true};
        break;
      }
  std::vector<std::pair<std::string, Tensor>> params;
  for (const auto& [name, t] : m->params().entries())
    if (name.rfind("refiner.", 0) != 0) params.emplace_back(name, Tensor(t).set_requires_grad(true));
  AdamW opt(params);
  double prev = std::numeric_limits<double>::infinity();
  double first = 0.0;
  for (int step = 0; step < 50; ++step) {
    GradTape tape;
    Tensor loss;
    {
      TapeScope scope(tape);
      const Tensor F = samlite::encode_image(*m, pre.image);
      const auto out = samlite::predict(*m, F, {c}, Tensor());
      loss = add(nfl_loss(out.logits, target),
                 scale(ptl_loss(sigmoid(out.logits), {to_map_coords(c.x, c.y, true, 32, L)}), kPtlWeight));
    }
    backward(loss, tape);
    opt.step(3e-4);
    const double v = loss.item();
    if (step == 0) first = v;
    EXPECT_LT(v, prev) << "step " << step;
    prev = v;
  }
  EXPECT_LT(prev, 0.8 * first);
}

TEST(Train, StageTwoLeavesFrozenBlobsUntouched) {
  auto m = focrefine::testing::tiny_model(31);
  const auto data = tiny_dataset(4, 600);
  std::vector<std::uint64_t> before, refiner_before = {m->params().checksum("refiner.")};
  for (const auto* p : {"encoder.", "prompt.", "decoder."}) before.push_back(m->params().checksum(p));
  const auto r = train(*m, data, tiny_train_config(2, 3));
  std::vector<std::uint64_t> after;
  for (const auto* p : {"encoder.", "prompt.", "decoder."}) after.push_back(m->params().checksum(p));
  EXPECT_EQ(before, after);
  EXPECT_NE(m->params().checksum("refiner."), refiner_before[0]);
  EXPECT_EQ(r.log.size(), 3u);
  for (const auto& [name, t] : m->params().entries()) EXPECT_FALSE(t.has_grad() && name.rfind("refiner.", 0) != 0);
}

TEST(Train, StageOneLeavesTheRefinerUntouched) {
  auto m = focrefine::testing::tiny_model(32);
  const auto data = tiny_dataset(4, 700);
  const auto refiner_before = m->params().checksum("refiner.");
  const auto enc_before = m->params().checksum("encoder.");
  train(*m, data, tiny_train_config(1, 3));
  EXPECT_EQ(m->params().checksum("refiner."), refiner_before);
  EXPECT_NE(m->params().checksum("encoder."), enc_before);
}

TEST(Train, RequiresGradFlagsAreRestored) {
  auto m = focrefine::testing::tiny_model(33);
  const auto data = tiny_dataset(2, 800);
  train(*m, data, tiny_train_config(2, 1));
  for (const auto& [name, t] : m->params().entries()) EXPECT_TRUE(t.requires_grad()) << name;
}

TEST(Train, DeterministicUnderFixedSeed) {
  const auto data = tiny_dataset(4, 900);
  std::vector<std::string> sums;
  for (int run = 0; run < 2; ++run) {
    auto m = focrefine::testing::tiny_model(34);
    const auto r1 = train(*m, data, tiny_train_config(1, 3));
    const auto r2 = train(*m, data, tiny_train_config(2, 3));
    sums.push_back(r1.trained_checksum + "/" + r2.trained_checksum + "/" + std::to_string(m->params().checksum()));
  }
  EXPECT_EQ(sums[0], sums[1]);
}

TEST(Train, WritesLogAndCheckpoint) {
  const auto dir = std::filesystem::temp_directory_path() / "focrefine_learn_test";
  std::filesystem::create_directories(dir);
  auto m = focrefine::testing::tiny_model(35);
  const auto data = tiny_dataset(3, 1000);
  auto cfg = tiny_train_config(1, 4);
  cfg.log_path = (dir / "train.jsonl").string();
  cfg.checkpoint_path = (dir / "model.frck").string();
  cfg.log_every = 2;
  cfg.probe_every = 2;
  cfg.probe_samples = 2;
  train(*m, data, cfg);
  std::ifstream in(cfg.log_path);
  std::string line;
  std::vector<nlohmann::json> rows;
  while (std::getline(in, line)) rows.push_back(nlohmann::json::parse(line));
  ASSERT_EQ(rows.size(), 2u);
  for (const auto& r : rows) {
    for (const auto* k : {"step", "stage", "nfl", "ptl", "lr", "iou_probe"}) EXPECT_TRUE(r.contains(k)) << k;
    EXPECT_GE(r["iou_probe"].get<double>(), 0.0);
    EXPECT_LE(r["iou_probe"].get<double>(), 1.0);
  }
  EXPECT_EQ(rows[1]["step"], 4);
  const auto loaded = samlite::Model::load(cfg.checkpoint_path);
  EXPECT_EQ(loaded->params().entries().size(), m->params().entries().size());
  std::filesystem::remove_all(dir);
}

TEST(Train, LogLineFormat) {
  LogRecord r{7, 2, 0.5, 0.25, 1e-3, std::nullopt};
  EXPECT_EQ(to_json_line(r), R"({"step":7,"stage":2,"nfl":0.5,"ptl":0.25,"lr":0.001,"iou_probe":null})");
  r.iou_probe = 0.75;
  EXPECT_NE(to_json_line(r).find("\"iou_probe\":0.75"), std::string::npos);
}

TEST(Train, RejectsInvalidConfig) {
  auto m = focrefine::testing::tiny_model(36);
  const auto data = tiny_dataset(1, 1100);
  auto bad = tiny_train_config(3, 1);
  EXPECT_THROW(train(*m, data, bad), std::invalid_argument);
  bad = tiny_train_config(1, 1);
  bad.gamma_click_fine = 1.0;
  EXPECT_THROW(train(*m, data, bad), std::invalid_argument);
  bad = tiny_train_config(1, 0);
  EXPECT_THROW(train(*m, data, bad), std::invalid_argument);
  EXPECT_THROW(train(*m, synthdata::Dataset{}, tiny_train_config(1, 1)), std::invalid_argument);
}
