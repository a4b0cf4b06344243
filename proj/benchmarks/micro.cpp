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

#include <benchmark/benchmark.h>

#include "focrefine/dwin/windows.hpp"
#include "focrefine/numerics/ops.hpp"
#include "focrefine/pdyrelu/pdyrelu.hpp"
#include "focrefine/refiner/refiner.hpp"
#include "focrefine/samlite/model.hpp"

using namespace focrefine;

namespace {

const std::shared_ptr<samlite::Model>& model_for(int preset) {
  static std::shared_ptr<samlite::Model> desk = samlite::Model::create(samlite::ModelConfig::desk(), 1);
  static std::shared_ptr<samlite::Model> full;
  if (preset == 0) return desk;
  if (!full) full = samlite::Model::create(samlite::ModelConfig::full(), 1);
  return full;
}

Tensor input_for(const samlite::Model& m) {
  Rng rng(3);
  const auto s = m.config().image_size;
  return Tensor::randn({s, s, 3}, rng);
}

Tensor blob_logits(int L) {
  Tensor t({L, L}, -4.0);
  auto d = t.mutable_data();
  for (int y = L / 4; y < L / 2; ++y)
    for (int x = L / 3; x < L / 2 + 4; ++x) d[y * L + x] = 4.0;
  return t;
}

void BM_Encoder(benchmark::State& st) {
  const auto& m = *model_for(static_cast<int>(st.range(0)));
  const Tensor img = input_for(m);
  NoGradScope ng;
  for (auto _ : st) benchmark::DoNotOptimize(samlite::encode_image(m, img));
}
BENCHMARK(BM_Encoder)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_PredictStep(benchmark::State& st) {
  const auto& m = *model_for(static_cast<int>(st.range(0)));
  NoGradScope ng;
  const Tensor F = samlite::encode_image(m, input_for(m));
  const int L = m.config().logits_size();
  const Tensor prev = blob_logits(L);
  const std::vector<Click> clicks{{40, 30, true}, {70, 50, false}};
  for (auto _ : st) benchmark::DoNotOptimize(samlite::predict(m, F, clicks, prev));
}
BENCHMARK(BM_PredictStep)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_FocusRefine(benchmark::State& st) {
  const auto& m = *model_for(static_cast<int>(st.range(0)));
  NoGradScope ng;
  const Tensor F = samlite::encode_image(m, input_for(m));
  const int L = m.config().logits_size();
  const Tensor prev = blob_logits(L);
  const auto d = samlite::predict(m, F, {{40, 30, true}}, prev);
  for (auto _ : st) benchmark::DoNotOptimize(refiner::focus_refine(F, prev, d.q_c, m.refiner(), {{4, 5}}));
}
BENCHMARK(BM_FocusRefine)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_SelectWindows(benchmark::State& st) {
  const int S = static_cast<int>(st.range(0));
  const dwin::BBox box{5, 7, 40, 33};
  for (auto _ : st) benchmark::DoNotOptimize(dwin::select_windows(box, 64, 64, S, dwin::half_shift(S)));
}
BENCHMARK(BM_SelectWindows)->Arg(4)->Arg(8)->Arg(16);

void BM_PartitionMerge(benchmark::State& st) {
  const int S = static_cast<int>(st.range(0));
  Rng rng(5);
  const Tensor F = Tensor::randn({64, 64, 32}, rng);
  NoGradScope ng;
  for (auto _ : st) {
    const auto ws = dwin::partition_windows(F, S, dwin::half_shift(S));
    benchmark::DoNotOptimize(dwin::merge_windows(ws, 64, 64));
  }
}
BENCHMARK(BM_PartitionMerge)->Arg(8)->Arg(16)->Arg(32)->Unit(benchmark::kMicrosecond);

void BM_PDyReLU(benchmark::State& st) {
  const auto C = st.range(0);
  Rng rng(7);
  ParameterSet ps;
  const auto p = pdyrelu::Params::make(ps, "p", C, rng);
  const Tensor f = Tensor::randn({16, 16, C}, rng);
  const Tensor q = Tensor::randn({1, C}, rng);
  NoGradScope ng;
  for (auto _ : st) benchmark::DoNotOptimize(pdyrelu::pdyrelu_apply(f, q, p));
}
BENCHMARK(BM_PDyReLU)->Arg(32)->Arg(64)->Unit(benchmark::kMicrosecond);

void BM_MatmulBackward(benchmark::State& st) {
  const auto n = st.range(0);
  Rng rng(9);
  Tensor a = Tensor::randn({n, n}, rng);
  Tensor b = Tensor::randn({n, n}, rng);
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  for (auto _ : st) {
    GradTape tape;
    Tensor loss;
    {
      TapeScope scope(tape);
      loss = sum(matmul(a, b));
    }
    backward(loss, tape);
    a.zero_grad();
    b.zero_grad();
  }
}
BENCHMARK(BM_MatmulBackward)->Arg(64)->Arg(128)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
