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

#include <algorithm>

#include "focrefine/pdyrelu/pdyrelu.hpp"
#include "support/gradcheck.hpp"

using namespace focrefine;
using namespace focrefine::pdyrelu;
using focrefine::testing::finite_difference_check;
using focrefine::testing::weighted_sum;

namespace {

void set_constant(Tensor t, double v) {
  for (auto& x : t.mutable_data()) x = v;
}

// Forces one MLP to emit the constant `value` everywhere.
void force_constant(MlpParams& m, double value) {
  set_constant(m.fc2.weight, 0.0);
  set_constant(m.fc2.bias, value);
}

// Makes one MLP the identity map on nonnegative inputs shifted by a bias:
// fc1 = I with bias `shift`, fc2 = I with bias -shift.
void force_identity(MlpParams& m, std::int64_t C, double shift) {
  auto w1 = m.fc1.weight.mutable_data(), w2 = m.fc2.weight.mutable_data();
  for (std::int64_t i = 0; i < C; ++i)
    for (std::int64_t j = 0; j < C; ++j) w1[i * C + j] = w2[i * C + j] = i == j ? 1.0 : 0.0;
  set_constant(m.fc1.bias, shift);
  set_constant(m.fc2.bias, -shift);
}

}  // namespace

TEST(DyReLUReference, PlainReluIsASpecialCase) {
  Rng rng(1);
  Tensor x = Tensor::randn({5, 7}, rng);
  Tensor y = dyrelu_reference(x, {{Tensor({1}, 1.0), Tensor({1}, 0.0)}, {Tensor({1}, 0.0), Tensor({1}, 0.0)}});
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y[i], std::max(x[i], 0.0));
}

TEST(DyReLUReference, EqualBranchesGiveIdentity) {
  Rng rng(2);
  Tensor x = Tensor::randn({6}, rng);
  Tensor y = dyrelu_reference(x, {{Tensor({1}, 1.0), Tensor({1}, 0.0)}, {Tensor({1}, 1.0), Tensor({1}, 0.0)}});
  EXPECT_TRUE(bit_equal(y, x));
}

TEST(DyReLUReference, MatchesBranchEnumeration) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x = Tensor::randn({3}, rng);
    std::vector<std::pair<Tensor, Tensor>> co;
    for (int k = 0; k < 3; ++k) co.emplace_back(Tensor::randn({3}, rng), Tensor::randn({3}, rng));
    Tensor y = dyrelu_reference(x, co);
    for (int c = 0; c < 3; ++c) {
      double best = -1e300;
      for (const auto& [a, b] : co) best = std::max(best, a[c] * x[c] + b[c]);
      EXPECT_EQ(y[c], best);
    }
  }
  EXPECT_THROW(dyrelu_reference(Tensor({3}, 0.0), {}), std::invalid_argument);
}

TEST(HyperCoefficients, ZeroQueryAndConstantInput) {
  Rng rng(4);
  Tensor f = Tensor::randn({2, 2, 3}, rng);
  auto raw = hyper_coefficients(f, Tensor({1, 3}, 0.0));
  for (double v : raw.a0.data()) EXPECT_EQ(v, 0.0);
  for (double v : raw.b0.data()) EXPECT_EQ(v, 0.0);
  std::vector<double> cv;
  for (int p = 0; p < 4; ++p)
    for (double v : {0.5, -1.25, 2.0}) cv.push_back(v);
  auto rc = hyper_coefficients(Tensor({2, 2, 3}, cv), Tensor::randn({1, 3}, rng));
  for (int p = 0; p < 4; ++p) {
    EXPECT_DOUBLE_EQ(rc.a1[p * 3 + 0], 0.5);
    EXPECT_DOUBLE_EQ(rc.b1[p * 3 + 1], -1.25);
    EXPECT_DOUBLE_EQ(rc.a1[p * 3 + 2], 2.0);
  }
}

TEST(HyperCoefficients, PixelSimilarityMatchesHandLoop) {
  Rng rng(5);
  Tensor f = Tensor::randn({2, 2, 3}, rng), q = Tensor::randn({1, 3}, rng);
  auto raw = hyper_coefficients(f, q);
  ASSERT_EQ(raw.a0.shape(), f.shape());
  ASSERT_EQ(raw.a1.shape(), f.shape());
  for (int p = 0; p < 4; ++p) {
    double dot = 0.0;
    for (int c = 0; c < 3; ++c) dot += f[p * 3 + c] * q[c];
    for (int c = 0; c < 3; ++c) {
      EXPECT_NEAR(raw.a0[p * 3 + c], dot, 1e-12);
      EXPECT_NEAR(raw.b0[p * 3 + c], dot, 1e-12);
    }
  }
}

TEST(HyperCoefficients, PixelBranchIsLinearInQuery) {
  Rng rng(6);
  Tensor f = Tensor::randn({3, 3, 4}, rng), q1 = Tensor::randn({1, 4}, rng), q2 = Tensor::randn({1, 4}, rng);
  auto r1 = hyper_coefficients(f, q1), r2 = hyper_coefficients(f, q2);
  auto r12 = hyper_coefficients(f, add(q1, scale(q2, 2.5)));
  for (std::size_t i = 0; i < f.numel(); ++i) EXPECT_NEAR(r12.a0[i], r1.a0[i] + 2.5 * r2.a0[i], 1e-10);
}

TEST(CoefficientMlps, ZeroAndIdentityParameterizations) {
  Rng rng(7);
  ParameterSet ps;
  auto p = Params::make(ps, "act", 2, rng);
  Tensor f = Tensor::randn({1, 1, 2}, rng), q = Tensor::randn({1, 2}, rng);
  auto raw = hyper_coefficients(f, q);
  for (auto* m : {&p.a0, &p.b0, &p.a1, &p.b1}) {
    for (auto* t : {&m->fc1.weight, &m->fc1.bias, &m->fc2.weight, &m->fc2.bias}) set_constant(*t, 0.0);
  }
  auto z = coefficient_mlps(raw, p);
  for (const auto* t : {&z.a0, &z.b0, &z.a1, &z.b1})
    for (double v : t->data()) EXPECT_EQ(v, 0.0);
  for (auto* m : {&p.a0, &p.b0, &p.a1, &p.b1}) force_identity(*m, 2, 100.0);
  auto id = coefficient_mlps(raw, p);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_NEAR(id.a0[i], raw.a0[i], 1e-12);
    EXPECT_NEAR(id.a1[i], raw.a1[i], 1e-12);
  }
}

TEST(CoefficientMlps, MatchesManualTwoLayerEvaluation) {
  Rng rng(8);
  ParameterSet ps;
  auto p = Params::make(ps, "act", 2, rng);
  for (auto* m : {&p.a0, &p.b0, &p.a1, &p.b1}) {
    for (auto* t : {&m->fc1.bias, &m->fc2.bias}) {
      auto d = t->mutable_data();
      for (auto& v : d) v = std::normal_distribution<double>()(rng);
    }
  }
  Tensor f = Tensor::randn({1, 1, 2}, rng), q = Tensor::randn({1, 2}, rng);
  auto raw = hyper_coefficients(f, q);
  auto out = coefficient_mlps(raw, p);
  auto manual = [](const MlpParams& m, const Tensor& in) {
    std::vector<double> h(2), o(2);
    for (int j = 0; j < 2; ++j) {
      h[j] = m.fc1.bias[j];
      for (int i = 0; i < 2; ++i) h[j] += in[i] * m.fc1.weight[i * 2 + j];
      h[j] = std::max(h[j], 0.0);
    }
    for (int j = 0; j < 2; ++j) {
      o[j] = m.fc2.bias[j];
      for (int i = 0; i < 2; ++i) o[j] += h[i] * m.fc2.weight[i * 2 + j];
    }
    return o;
  };
  auto ea0 = manual(p.a0, raw.a0), eb0 = manual(p.b0, raw.b0), ea1 = manual(p.a1, raw.a1), eb1 = manual(p.b1, raw.b1);
  for (int c = 0; c < 2; ++c) {
    EXPECT_NEAR(out.a0[c], ea0[c], 1e-6);
    EXPECT_NEAR(out.b0[c], eb0[c], 1e-6);
    EXPECT_NEAR(out.a1[c], ea1[c], 1e-6);
    EXPECT_NEAR(out.b1[c], eb1[c], 1e-6);
  }
}

TEST(PDyReLU, ForcedCoefficientsReproducePlainRelu) {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    ParameterSet ps;
    auto p = Params::make(ps, "act", 4, rng);
    force_constant(p.a0, 1.0);
    force_constant(p.b0, 0.0);
    force_constant(p.a1, 0.0);
    force_constant(p.b1, 0.0);
    Tensor f = Tensor::randn({3, 3, 4}, rng), q = Tensor::randn({1, 4}, rng);
    Tensor y = pdyrelu_apply(f, q, p);
    for (std::size_t i = 0; i < f.numel(); ++i) ASSERT_EQ(y[i], std::max(f[i], 0.0));
  }
}

TEST(PDyReLU, EqualBranchesCollapseToOneLinearMap) {
  Rng rng(10);
  ParameterSet ps;
  auto p = Params::make(ps, "act", 3, rng);
  force_constant(p.a0, 0.7);
  force_constant(p.a1, 0.7);
  force_constant(p.b0, -0.2);
  force_constant(p.b1, -0.2);
  Tensor f = Tensor::randn({2, 2, 3}, rng), q = Tensor::randn({1, 3}, rng);
  Tensor y = pdyrelu_apply(f, q, p);
  for (std::size_t i = 0; i < f.numel(); ++i) EXPECT_DOUBLE_EQ(y[i], 0.7 * f[i] - 0.2);
}

TEST(PDyReLU, EqualsReferenceFedPostMlpCoefficients) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    ParameterSet ps;
    auto p = Params::make(ps, "act", 4, rng);
    Tensor f = Tensor::randn({2, 2, 4}, rng), q = Tensor::randn({1, 4}, rng);
    auto co = coefficient_mlps(hyper_coefficients(f, q), p);
    Tensor ref = dyrelu_reference(f, {{co.a0, co.b0}, {co.a1, co.b1}});
    Tensor y = pdyrelu_apply(f, q, p);
    for (std::size_t i = 0; i < f.numel(); ++i) {
      EXPECT_NEAR(y[i], ref[i], 1e-10);
      // Pointwise max of the two branches, never below either one.
      EXPECT_GE(y[i], std::min(co.a0[i] * f[i] + co.b0[i], co.a1[i] * f[i] + co.b1[i]) - 1e-10);
    }
  }
}

TEST(PDyReLU, DirectionalDerivativesMatchBranchSlopes) {
  Rng rng(12);
  ParameterSet ps;
  auto p = Params::make(ps, "act", 3, rng);
  Tensor f = Tensor::randn({2, 2, 3}, rng), q = Tensor::randn({1, 3}, rng);
  auto co = coefficient_mlps(hyper_coefficients(f, q), p);
  // Freeze coefficients, move f along d: the active branch slope is a^k * d.
  Tensor d = Tensor::randn({2, 2, 3}, rng);
  const double eps = 1e-7;
  Tensor fp = add(f, scale(d, eps));
  Tensor y0 = dyrelu_reference(f, {{co.a0, co.b0}, {co.a1, co.b1}});
  Tensor y1 = dyrelu_reference(fp, {{co.a0, co.b0}, {co.a1, co.b1}});
  for (std::size_t i = 0; i < f.numel(); ++i) {
    const double br0 = co.a0[i] * f[i] + co.b0[i], br1 = co.a1[i] * f[i] + co.b1[i];
    if (std::abs(br0 - br1) < 1e-4) continue;
    const double slope = (br0 > br1 ? co.a0[i] : co.a1[i]) * d[i];
    EXPECT_NEAR((y1[i] - y0[i]) / eps, slope, 1e-5);
  }
}

TEST(PDyReLU, ParameterGradientsMatchFiniteDifferences) {
  Rng rng(13);
  int checked_sets = 0;
  for (int seed = 0; seed < 10; ++seed) {
    ParameterSet ps;
    auto p = Params::make(ps, "act", 3, rng);
    Tensor f = Tensor::randn({2, 2, 3}, rng), q = Tensor::randn({1, 3}, rng);
    f.set_requires_grad(true);
    q.set_requires_grad(true);
    auto co = coefficient_mlps(hyper_coefficients(f, q), p);
    bool near_tie = false;
    for (std::size_t i = 0; i < f.numel(); ++i)
      near_tie |= std::abs((co.a0[i] - co.a1[i]) * f[i] + co.b0[i] - co.b1[i]) < 1e-3;
    if (near_tie) continue;
    Tensor g = Tensor::randn({2, 2, 3}, rng);
    std::vector<Tensor> wrt{f, q};
    for (const auto& e : ps.entries()) wrt.push_back(e.second);
    const auto r = finite_difference_check([&] { return weighted_sum(pdyrelu_apply(f, q, p), g); }, wrt);
    EXPECT_LT(r.max_rel_error, 1e-3);
    ++checked_sets;
  }
  EXPECT_GT(checked_sets, 3);
}
