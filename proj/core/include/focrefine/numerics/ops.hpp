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

#include <optional>
#include <utility>
#include <vector>

#include "focrefine/numerics/tensor.hpp"

namespace focrefine {

// Broadcasting follows trailing-dimension rules: shapes are right-aligned and
// each pair of dims must be equal or one of them 1.
Shape broadcast_shape(const Shape& a, const Shape& b);

enum class ElementwiseKind { kAdd, kSub, kMul, kMax, kScale, kSigmoid, kExpandBroadcast };

/// Dispatching front door for the elementwise family. `b` is required for the
/// binary kinds; kScale reads `factor`; kExpandBroadcast reads `target`.
Tensor elementwise(ElementwiseKind kind, const Tensor& a, const std::optional<Tensor>& b = std::nullopt,
                   double factor = 1.0, const Shape& target = {});

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
// Ties route the gradient to `a`.
Tensor maximum(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor expand(const Tensor& a, const Shape& target);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// [n, C] -> [1, C]
Tensor mean_rows(const Tensor& a);

Tensor reshape(const Tensor& a, const Shape& shape);
// Swaps the last two axes.
Tensor transpose_last2(const Tensor& a);
// Concatenate along axis 0.
Tensor concat_rows(const std::vector<Tensor>& parts);
// Rows [begin, end) along axis 0.
Tensor slice_rows(const Tensor& a, std::int64_t begin, std::int64_t end);

/// Treats x as rows of its last axis ([N, C]) and returns [M, C] with row i
/// equal to x row index[i], or zeros where index[i] is -1.
Tensor gather_rows(const Tensor& x, const std::vector<std::int64_t>& index);

/// Copy of base (rows of its last axis) with row index[i] replaced by src
/// row i; entries with index -1 are dropped. Targets must be distinct.
Tensor scatter_rows(const Tensor& base, const Tensor& src, const std::vector<std::int64_t>& index);

/// [..., m, k] x [..., k, n] -> [..., m, n]; batch dims broadcast.
Tensor matmul(const Tensor& a, const Tensor& b);

/// Row-max stabilized softmax over the last axis.
Tensor softmax_lastdim(const Tensor& x);

/// Per-row normalization over the last axis, then gain/bias of shape [C].
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

/// Multi-head scaled dot-product attention on pre-projected inputs.
/// q: [..., a, d], k: [..., b, d], v: [..., b, dv]; d and dv split evenly
/// across `heads`, each head scaled by 1/sqrt(d / heads).
Tensor attention_core(const Tensor& q, const Tensor& k, const Tensor& v, int heads);

/// Projection weights for one attention (no output projection).
struct AttentionWeights {
  Tensor wq, wk, wv;  // [C, d]
};

/// softmax(x Wq Wk^T y^T / sqrt(d_head)) z Wv, heads concatenated.
/// x: [a, C], y: [b, C], z: [b, C] (leading batch dims allowed).
Tensor attention(const Tensor& x, const Tensor& y, const Tensor& z, const AttentionWeights& w,
                 int heads = 1);

/// x: [H, W, Cin], w: [kh, kw, Cin, Cout], b: [Cout].
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride = 1, int padding = -1);

/// Transposed convolution with kernel == stride (no overlap).
/// x: [H, W, Cin], w: [k, k, Cin, Cout] -> [H*k, W*k, Cout].
Tensor conv_transpose2d(const Tensor& x, const Tensor& w, const Tensor& b);

/// 3x3 deformable convolution, stride 1, padding 1.
/// x: [H, W, C]; offsets: [H, W, 18] as (dy, dx) per tap in row-major tap
/// order; w: [3, 3, C, Cout]; b: [Cout]. Taps are sampled bilinearly with
/// zeros outside the input.
Tensor deform_conv2d(const Tensor& x, const Tensor& offsets, const Tensor& w, const Tensor& b);

/// [S, S, C] -> [1, 1, C], channel-wise mean.
Tensor avg_pool_spatial(const Tensor& x);

/// Bilinear samples of a 2-d map x: [H, W] at (row, col) points in its own
/// pixel coordinates (pixel centers at integers). Zero outside.
Tensor bilinear_sample(const Tensor& x, const std::vector<std::pair<double, double>>& points);

/// Deterministic parameter initializers.
Tensor init_param(Shape shape, Rng& rng, double stddev);
Tensor init_constant(Shape shape, double value);

}  // namespace focrefine
