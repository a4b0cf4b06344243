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

#include "focrefine/numerics/ops.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace focrefine {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;
using Stride = Eigen::OuterStride<>;
using SMapMat = Eigen::Map<RowMat, 0, Stride>;
using CSMapMat = Eigen::Map<const RowMat, 0, Stride>;

// dst[c] += sum over rows of m[r, c], rows in order, independent of alignment.
void add_column_sums(const double* m, std::int64_t rows, std::int64_t cols, double* dst) {
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t c = 0; c < cols; ++c) dst[c] += m[r * cols + c];
}

[[noreturn]] void shape_error(const std::string& op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(op + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

// Maps every output element to its source element in an input broadcast to
// `out`. Empty result means identity mapping.
std::vector<std::size_t> broadcast_index(const Shape& in, const Shape& out) {
  if (in == out) return {};
  const std::size_t r = out.size();
  std::vector<std::int64_t> in_stride(r, 0);
  std::int64_t s = 1;
  for (std::size_t k = 0; k < in.size(); ++k) {
    const std::size_t ii = in.size() - 1 - k;
    const std::size_t oi = r - 1 - k;
    in_stride[oi] = in[ii] == 1 ? 0 : s;
    s *= in[ii];
  }
  const std::size_t n = shape_numel(out);
  std::vector<std::size_t> idx(n);
  std::vector<std::int64_t> counter(r, 0);
  std::int64_t pos = 0;
  for (std::size_t i = 0; i < n; ++i) {
    idx[i] = static_cast<std::size_t>(pos);
    for (std::size_t d = r; d-- > 0;) {
      ++counter[d];
      pos += in_stride[d];
      if (counter[d] < out[d]) break;
      pos -= in_stride[d] * counter[d];
      counter[d] = 0;
    }
  }
  return idx;
}

template <typename Fwd, typename Bwd>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, Fwd fwd, Bwd bwd) {
  Shape out_shape;
  try {
    out_shape = broadcast_shape(a.shape(), b.shape());
  } catch (const std::invalid_argument&) {
    shape_error(name, a.shape(), b.shape());
  }
  const auto ia = broadcast_index(a.shape(), out_shape);
  const auto ib = broadcast_index(b.shape(), out_shape);
  const std::size_t n = shape_numel(out_shape);
  std::vector<double> out(n);
  const auto da = a.data();
  const auto db = b.data();
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = fwd(da[ia.empty() ? i : ia[i]], db[ib.empty() ? i : ib[i]]);
  }
  const bool rec = detail::needs_record({&a, &b});
  BackwardFn fn;
  if (rec) {
    fn = [a, b, ia, ib, n, bwd](std::span<const double> g, GradSink& sink) {
      auto ga = sink(0);
      auto gb = sink(1);
      const auto da = a.data();
      const auto db = b.data();
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t ja = ia.empty() ? i : ia[i];
        const std::size_t jb = ib.empty() ? i : ib[i];
        double pa = 0.0, pb = 0.0;
        bwd(da[ja], db[jb], g[i], pa, pb);
        if (!ga.empty()) ga[ja] += pa;
        if (!gb.empty()) gb[jb] += pb;
      }
    };
  }
  return detail::finish(std::move(out_shape), std::move(out), {a, b}, rec, std::move(fn));
}

template <typename Fwd, typename Deriv>
Tensor unary_op(const Tensor& a, Fwd fwd, Deriv deriv) {
  const auto da = a.data();
  std::vector<double> out(da.size());
  for (std::size_t i = 0; i < da.size(); ++i) out[i] = fwd(da[i]);
  const bool rec = detail::needs_record({&a});
  BackwardFn fn;
  if (rec) {
    // deriv(x, y) receives the input and the output value.
    fn = [a, out, deriv](std::span<const double> g, GradSink& sink) {
      auto ga = sink(0);
      const auto da = a.data();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * deriv(da[i], out[i]);
    };
  }
  return detail::finish(a.shape(), std::move(out), {a}, rec, std::move(fn));
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::int64_t batch_count(const Shape& s, std::size_t keep) {
  std::int64_t n = 1;
  for (std::size_t i = 0; i + keep < s.size(); ++i) n *= s[i];
  return n;
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t k = 0; k < r; ++k) {
    const std::int64_t da = k < a.size() ? a[a.size() - 1 - k] : 1;
    const std::int64_t db = k < b.size() ? b[b.size() - 1 - k] : 1;
    if (da != db && da != 1 && db != 1) shape_error("broadcast", a, b);
    out[r - 1 - k] = std::max(da, db);
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double g, double& pa, double& pb) {
        pa = g;
        pb = g;
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double g, double& pa, double& pb) {
        pa = g;
        pb = -g;
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double x, double y, double g, double& pa, double& pb) {
        pa = g * y;
        pb = g * x;
      });
}

Tensor maximum(const Tensor& a, const Tensor& b) {
  return binary_op(
      "maximum", a, b, [](double x, double y) { return x >= y ? x : y; },
      [](double x, double y, double g, double& pa, double& pb) {
        if (x >= y) {
          pa = g;
        } else {
          pb = g;
        }
      });
}

Tensor scale(const Tensor& a, double factor) {
  return unary_op(
      a, [factor](double x) { return x * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
  return unary_op(
      a, [value](double x) { return x + value; }, [](double, double) { return 1.0; });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op(a, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& a) {
  return unary_op(
      a, [](double x) { return x > 0 ? x : 0.0; }, [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Tensor expand(const Tensor& a, const Shape& target) {
  if (broadcast_shape(a.shape(), target) != target) shape_error("expand", a.shape(), target);
  const auto idx = broadcast_index(a.shape(), target);
  const std::size_t n = shape_numel(target);
  std::vector<double> out(n);
  const auto da = a.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = da[idx.empty() ? i : idx[i]];
  const bool rec = detail::needs_record({&a});
  BackwardFn fn;
  if (rec) {
    fn = [idx](std::span<const double> g, GradSink& sink) {
      auto ga = sink(0);
      for (std::size_t i = 0; i < g.size(); ++i) ga[idx.empty() ? i : idx[i]] += g[i];
    };
  }
  return detail::finish(target, std::move(out), {a}, rec, std::move(fn));
}

Tensor elementwise(ElementwiseKind kind, const Tensor& a, const std::optional<Tensor>& b, double factor,
                   const Shape& target) {
  auto need_b = [&]() -> const Tensor& {
    if (!b || !b->defined()) throw std::invalid_argument("elementwise: binary kind requires a second operand");
    return *b;
  };
  switch (kind) {
    case ElementwiseKind::kAdd:
      return add(a, need_b());
    case ElementwiseKind::kSub:
      return sub(a, need_b());
    case ElementwiseKind::kMul:
      return mul(a, need_b());
    case ElementwiseKind::kMax:
      return maximum(a, need_b());
    case ElementwiseKind::kScale:
      return scale(a, factor);
    case ElementwiseKind::kSigmoid:
      return sigmoid(a);
    case ElementwiseKind::kExpandBroadcast:
      return expand(a, target);
  }
  throw std::invalid_argument("elementwise: unknown kind");
}

Tensor sum(const Tensor& a) {
  const auto da = a.data();
  const double s = std::accumulate(da.begin(), da.end(), 0.0);
  const bool rec = detail::needs_record({&a});
  BackwardFn fn;
  if (rec) {
    fn = [](std::span<const double> g, GradSink& sink) {
      auto ga = sink(0);
      for (auto& x : ga) x += g[0];
    };
  }
  return detail::finish(Shape{1}, {s}, {a}, rec, std::move(fn));
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor mean_rows(const Tensor& a) {
  if (a.rank() != 2) throw std::invalid_argument("mean_rows expects [n, C], got " + shape_str(a.shape()));
  const auto n = a.dim(0), c = a.dim(1);
  std::vector<double> out(static_cast<std::size_t>(c), 0.0);
  const auto da = a.data();
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < c; ++j) out[j] += da[i * c + j];
  for (auto& v : out) v /= static_cast<double>(n);
  const bool rec = detail::needs_record({&a});
  BackwardFn fn;
  if (rec) {
    fn = [n, c](std::span<const double> g, GradSink& sink) {
      auto ga = sink(0);
      const double inv = 1.0 / static_cast<double>(n);
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < c; ++j) ga[i * c + j] += g[j] * inv;
    };
  }
  return detail::finish(Shape{1, c}, std::move(out), {a}, rec, std::move(fn));
}

Tensor reshape(const Tensor& a, const Shape& shape) {
  if (shape_numel(shape) != a.numel()) shape_error("reshape", a.shape(), shape);
  std::vector<double> out(a.data().begin(), a.data().end());
  const bool rec = detail::needs_record({&a});
  BackwardFn fn;
  if (rec) {
    fn = [](std::span<const double> g, GradSink& sink) {
      auto ga = sink(0);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    };
  }
  return detail::finish(shape, std::move(out), {a}, rec, std::move(fn));
}

Tensor transpose_last2(const Tensor& a) {
  if (a.rank() < 2) throw std::invalid_argument("transpose_last2 needs rank >= 2");
  const auto m = a.dim(-2), n = a.dim(-1);
  const auto batches = batch_count(a.shape(), 2);
  Shape s = a.shape();
  std::swap(s[s.size() - 1], s[s.size() - 2]);
  std::vector<double> out(a.numel());
  const auto da = a.data();
  for (std::int64_t bi = 0; bi < batches; ++bi) {
    const double* src = da.data() + bi * m * n;
    double* dst = out.data() + bi * m * n;
    for (std::int64_t i = 0; i < m; ++i)
      for (std::int64_t j = 0; j < n; ++j) dst[j * m + i] = src[i * n + j];
  }
  const bool rec = detail::needs_record({&a});
  BackwardFn fn;
  if (rec) {
    fn = [m, n, batches](std::span<const double> g, GradSink& sink) {
      auto ga = sink(0);
      for (std::int64_t bi = 0; bi < batches; ++bi)
        for (std::int64_t i = 0; i < m; ++i)
          for (std::int64_t j = 0; j < n; ++j) ga[bi * m * n + i * n + j] += g[bi * m * n + j * m + i];
    };
  }
  return detail::finish(std::move(s), std::move(out), {a}, rec, std::move(fn));
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  Shape s = parts.front().shape();
  std::int64_t rows = 0;
  for (const auto& p : parts) {
    Shape tail_a(p.shape().begin() + 1, p.shape().end());
    Shape tail_b(s.begin() + 1, s.end());
    if (tail_a != tail_b) shape_error("concat_rows", s, p.shape());
    rows += p.dim(0);
  }
  s[0] = rows;
  std::vector<double> out;
  out.reserve(shape_numel(s));
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    offsets.push_back(out.size());
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  const bool rec = detail::needs_record(parts);
  BackwardFn fn;
  if (rec) {
    std::vector<std::size_t> sizes;
    for (const auto& p : parts) sizes.push_back(p.numel());
    fn = [offsets, sizes](std::span<const double> g, GradSink& sink) {
      for (std::size_t k = 0; k < offsets.size(); ++k) {
        auto gk = sink(k);
        if (gk.empty()) continue;
        for (std::size_t i = 0; i < sizes[k]; ++i) gk[i] += g[offsets[k] + i];
      }
    };
  }
  return detail::finish(std::move(s), std::move(out), parts, rec, std::move(fn));
}

Tensor slice_rows(const Tensor& a, std::int64_t begin, std::int64_t end) {
  if (begin < 0 || end > a.dim(0) || begin >= end) {
    throw std::out_of_range("slice_rows [" + std::to_string(begin) + ", " + std::to_string(end) +
                            ") out of range for " + shape_str(a.shape()));
  }
  const std::size_t row = a.numel() / static_cast<std::size_t>(a.dim(0));
  Shape s = a.shape();
  s[0] = end - begin;
  const auto da = a.data();
  std::vector<double> out(da.begin() + begin * row, da.begin() + end * row);
  const bool rec = detail::needs_record({&a});
  BackwardFn fn;
  if (rec) {
    fn = [begin, row](std::span<const double> g, GradSink& sink) {
      auto ga = sink(0);
      for (std::size_t i = 0; i < g.size(); ++i) ga[begin * row + i] += g[i];
    };
  }
  return detail::finish(std::move(s), std::move(out), {a}, rec, std::move(fn));
}

// ---------------------------------------------------------------------------

Tensor gather_rows(const Tensor& x, const std::vector<std::int64_t>& index) {
  if (x.rank() < 1) throw std::invalid_argument("gather_rows needs rank >= 1");
  const std::int64_t c = x.dim(-1);
  const std::int64_t n = static_cast<std::int64_t>(x.numel()) / c;
  const auto m = static_cast<std::int64_t>(index.size());
  if (m == 0) throw std::invalid_argument("gather_rows: empty index");
  std::vector<double> out(static_cast<std::size_t>(m * c), 0.0);
  const auto dx = x.data();
  for (std::int64_t i = 0; i < m; ++i) {
    const auto r = index[i];
    if (r < -1 || r >= n) throw std::out_of_range("gather_rows: row " + std::to_string(r) + " outside [0, " +
                                                  std::to_string(n) + ")");
    if (r >= 0) std::copy(dx.begin() + r * c, dx.begin() + (r + 1) * c, out.begin() + i * c);
  }
  const bool rec = detail::needs_record({&x});
  BackwardFn fn;
  if (rec) {
    fn = [index, c](std::span<const double> g, GradSink& sink) {
      auto gx = sink(0);
      for (std::size_t i = 0; i < index.size(); ++i) {
        if (index[i] < 0) continue;
        for (std::int64_t j = 0; j < c; ++j) gx[index[i] * c + j] += g[i * c + j];
      }
    };
  }
  return detail::finish(Shape{m, c}, std::move(out), {x}, rec, std::move(fn));
}

Tensor scatter_rows(const Tensor& base, const Tensor& src, const std::vector<std::int64_t>& index) {
  if (base.rank() < 1 || src.rank() < 1 || base.dim(-1) != src.dim(-1)) {
    shape_error("scatter_rows", base.shape(), src.shape());
  }
  const std::int64_t c = base.dim(-1);
  const std::int64_t n = static_cast<std::int64_t>(base.numel()) / c;
  const std::int64_t m = static_cast<std::int64_t>(src.numel()) / c;
  if (static_cast<std::int64_t>(index.size()) != m) {
    throw std::invalid_argument("scatter_rows: " + std::to_string(index.size()) + " indices for " +
                                std::to_string(m) + " source rows");
  }
  std::vector<char> taken(static_cast<std::size_t>(n), 0);
  for (auto r : index) {
    if (r < -1 || r >= n) throw std::out_of_range("scatter_rows: row " + std::to_string(r) + " out of range");
    if (r < 0) continue;
    if (taken[r]) throw std::invalid_argument("scatter_rows: duplicate target row " + std::to_string(r));
    taken[r] = 1;
  }
  std::vector<double> out(base.data().begin(), base.data().end());
  const auto ds = src.data();
  for (std::int64_t i = 0; i < m; ++i)
    if (index[i] >= 0) std::copy(ds.begin() + i * c, ds.begin() + (i + 1) * c, out.begin() + index[i] * c);
  const bool rec = detail::needs_record({&base, &src});
  BackwardFn fn;
  if (rec) {
    fn = [index, taken = std::move(taken), c](std::span<const double> g, GradSink& sink) {
      if (auto gb = sink(0); !gb.empty()) {
        for (std::size_t r = 0; r < taken.size(); ++r)
          if (!taken[r])
            for (std::int64_t j = 0; j < c; ++j) gb[r * c + j] += g[r * c + j];
      }
      if (auto gs = sink(1); !gs.empty()) {
        for (std::size_t i = 0; i < index.size(); ++i)
          if (index[i] >= 0)
            for (std::int64_t j = 0; j < c; ++j) gs[i * c + j] += g[index[i] * c + j];
      }
    };
  }
  return detail::finish(base.shape(), std::move(out), {base, src}, rec, std::move(fn));
}


Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) shape_error("matmul", a.shape(), b.shape());
  const auto m = a.dim(-2), k = a.dim(-1), k2 = b.dim(-2), n = b.dim(-1);
  if (k != k2) shape_error("matmul (inner dimension)", a.shape(), b.shape());

  const Shape ab(a.shape().begin(), a.shape().end() - 2);
  const Shape bb(b.shape().begin(), b.shape().end() - 2);
  Shape batch;
  try {
    batch = broadcast_shape(ab, bb);
  } catch (const std::invalid_argument&) {
    shape_error("matmul (batch)", a.shape(), b.shape());
  }
  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);

  const bool rec = detail::needs_record({&a, &b});
  std::vector<double> out(shape_numel(out_shape));

  if (bb.empty()) {
    // Fold a's batch into rows: one GEMM.
    const std::int64_t rows = static_cast<std::int64_t>(a.numel()) / k;
    CMapMat A(a.data().data(), rows, k);
    CMapMat B(b.data().data(), k, n);
    MapMat C(out.data(), rows, n);
    C.noalias() = A * B;
    BackwardFn fn;
    if (rec) {
      fn = [a, b, rows, k, n](std::span<const double> g, GradSink& sink) {
        CMapMat G(g.data(), rows, n);
        auto ga = sink(0);
        auto gb = sink(1);
        if (!ga.empty()) MapMat(ga.data(), rows, k).noalias() += G * CMapMat(b.data().data(), k, n).transpose();
        if (!gb.empty()) MapMat(gb.data(), k, n).noalias() += CMapMat(a.data().data(), rows, k).transpose() * G;
      };
    }
    return detail::finish(std::move(out_shape), std::move(out), {a, b}, rec, std::move(fn));
  }

  const std::size_t nb = batch.empty() ? 1 : shape_numel(batch);
  auto ia = broadcast_index(ab.empty() ? Shape{1} : ab, batch.empty() ? Shape{1} : batch);
  auto ib = broadcast_index(bb.empty() ? Shape{1} : bb, batch.empty() ? Shape{1} : batch);
  if (ia.empty()) {
    ia.resize(nb);
    std::iota(ia.begin(), ia.end(), 0);
  }
  if (ib.empty()) {
    ib.resize(nb);
    std::iota(ib.begin(), ib.end(), 0);
  }
  for (std::size_t bi = 0; bi < nb; ++bi) {
    CMapMat A(a.data().data() + ia[bi] * m * k, m, k);
    CMapMat B(b.data().data() + ib[bi] * k * n, k, n);
    MapMat(out.data() + bi * m * n, m, n).noalias() = A * B;
  }
  BackwardFn fn;
  if (rec) {
    fn = [a, b, ia, ib, nb, m, k, n](std::span<const double> g, GradSink& sink) {
      auto ga = sink(0);
      auto gb = sink(1);
      for (std::size_t bi = 0; bi < nb; ++bi) {
        CMapMat G(g.data() + bi * m * n, m, n);
        if (!ga.empty())
          MapMat(ga.data() + ia[bi] * m * k, m, k).noalias() +=
              G * CMapMat(b.data().data() + ib[bi] * k * n, k, n).transpose();
        if (!gb.empty())
          MapMat(gb.data() + ib[bi] * k * n, k, n).noalias() +=
              CMapMat(a.data().data() + ia[bi] * m * k, m, k).transpose() * G;
      }
    };
  }
  return detail::finish(std::move(out_shape), std::move(out), {a, b}, rec, std::move(fn));
}

Tensor softmax_lastdim(const Tensor& x) {
  if (x.rank() < 1) throw std::invalid_argument("softmax_lastdim: empty last dimension");
  const auto c = x.dim(-1);
  const auto rows = static_cast<std::int64_t>(x.numel()) / c;
  std::vector<double> out(x.numel());
  const auto dx = x.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* src = dx.data() + r * c;
    double* dst = out.data() + r * c;
    const double mx = *std::max_element(src, src + c);
    double s = 0.0;
    for (std::int64_t j = 0; j < c; ++j) {
      dst[j] = std::exp(src[j] - mx);
      s += dst[j];
    }
    const double inv = 1.0 / s;
    for (std::int64_t j = 0; j < c; ++j) dst[j] *= inv;
  }
  const bool rec = detail::needs_record({&x});
  BackwardFn fn;
  if (rec) {
    fn = [out, rows, c](std::span<const double> g, GradSink& sink) {
      auto gx = sink(0);
      for (std::int64_t r = 0; r < rows; ++r) {
        const double* y = out.data() + r * c;
        const double* gy = g.data() + r * c;
        double dot = 0.0;
        for (std::int64_t j = 0; j < c; ++j) dot += gy[j] * y[j];
        for (std::int64_t j = 0; j < c; ++j) gx[r * c + j] += y[j] * (gy[j] - dot);
      }
    };
  }
  return detail::finish(x.shape(), std::move(out), {x}, rec, std::move(fn));
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const auto c = x.dim(-1);
  if (gain.numel() != static_cast<std::size_t>(c) || bias.numel() != static_cast<std::size_t>(c)) {
    shape_error("layer_norm", x.shape(), gain.shape());
  }
  const auto rows = static_cast<std::int64_t>(x.numel()) / c;
  std::vector<double> out(x.numel());
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(static_cast<std::size_t>(rows));
  const auto dx = x.data();
  const auto dg = gain.data();
  const auto dbias = bias.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* src = dx.data() + r * c;
    double mu = 0.0;
    for (std::int64_t j = 0; j < c; ++j) mu += src[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::int64_t j = 0; j < c; ++j) var += (src[j] - mu) * (src[j] - mu);
    var /= static_cast<double>(c);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::int64_t j = 0; j < c; ++j) {
      const double h = (src[j] - mu) * is;
      xhat[r * c + j] = h;
      out[r * c + j] = h * dg[j] + dbias[j];
    }
  }
  const bool rec = detail::needs_record({&x, &gain, &bias});
  BackwardFn fn;
  if (rec) {
    fn = [gain, xhat = std::move(xhat), inv_std = std::move(inv_std), rows, c](std::span<const double> g,
                                                                               GradSink& sink) {
      auto gx = sink(0);
      auto gg = sink(1);
      auto gb = sink(2);
      const auto dg = gain.data();
      std::vector<double> dh(static_cast<std::size_t>(c));
      for (std::int64_t r = 0; r < rows; ++r) {
        const double* gy = g.data() + r * c;
        const double* h = xhat.data() + r * c;
        double s1 = 0.0, s2 = 0.0;
        for (std::int64_t j = 0; j < c; ++j) {
          dh[j] = gy[j] * dg[j];
          s1 += dh[j];
          s2 += dh[j] * h[j];
          if (!gg.empty()) gg[j] += gy[j] * h[j];
          if (!gb.empty()) gb[j] += gy[j];
        }
        if (!gx.empty()) {
          const double k = inv_std[r] / static_cast<double>(c);
          for (std::int64_t j = 0; j < c; ++j)
            gx[r * c + j] += k * (static_cast<double>(c) * dh[j] - s1 - h[j] * s2);
        }
      }
    };
  }
  return detail::finish(x.shape(), std::move(out), {x, gain, bias}, rec, std::move(fn));
}

// ---------------------------------------------------------------------------

Tensor attention_core(const Tensor& q, const Tensor& k, const Tensor& v, int heads) {
  if (q.rank() < 2 || k.rank() != q.rank() || v.rank() != q.rank()) {
    shape_error("attention_core", q.shape(), k.shape());
  }
  const auto a = q.dim(-2), d = q.dim(-1), b = k.dim(-2), dv = v.dim(-1);
  if (k.dim(-1) != d) shape_error("attention_core (key width)", q.shape(), k.shape());
  if (v.dim(-2) != b) shape_error("attention_core (value rows)", k.shape(), v.shape());
  if (!std::equal(q.shape().begin(), q.shape().end() - 2, k.shape().begin()) ||
      !std::equal(q.shape().begin(), q.shape().end() - 2, v.shape().begin())) {
    shape_error("attention_core (batch)", q.shape(), v.shape());
  }
  if (heads < 1 || d % heads != 0 || dv % heads != 0) {
    throw std::invalid_argument("attention_core: width " + std::to_string(d) + "/" + std::to_string(dv) +
                                " not divisible by head count " + std::to_string(heads));
  }
  const auto dh = d / heads, dvh = dv / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto nb = batch_count(q.shape(), 2);
  const bool rec = detail::needs_record({&q, &k, &v});

  Shape out_shape = q.shape();
  out_shape.back() = dv;
  std::vector<double> out(shape_numel(out_shape));
  std::vector<double> probs;
  if (rec) probs.resize(static_cast<std::size_t>(nb * heads * a * b));
  RowMat scores(a, b);
  for (std::int64_t bi = 0; bi < nb; ++bi) {
    for (int h = 0; h < heads; ++h) {
      CSMapMat Q(q.data().data() + bi * a * d + h * dh, a, dh, Stride(d));
      CSMapMat K(k.data().data() + bi * b * d + h * dh, b, dh, Stride(d));
      CSMapMat V(v.data().data() + bi * b * dv + h * dvh, b, dvh, Stride(dv));
      scores.noalias() = (Q * K.transpose()) * sc;
      for (std::int64_t r = 0; r < a; ++r) {
        const double mx = scores.row(r).maxCoeff();
        double s = 0.0;
        for (std::int64_t j = 0; j < b; ++j) {
          const double e = std::exp(scores(r, j) - mx);
          scores(r, j) = e;
          s += e;
        }
        scores.row(r) /= s;
      }
      SMapMat O(out.data() + bi * a * dv + h * dvh, a, dvh, Stride(dv));
      O.noalias() = scores * V;
      if (rec) MapMat(probs.data() + (bi * heads + h) * a * b, a, b) = scores;
    }
  }
  BackwardFn fn;
  if (rec) {
    fn = [q, k, v, probs = std::move(probs), nb, heads, a, b, d, dv, dh, dvh, sc](std::span<const double> g,
                                                                                  GradSink& sink) {
      auto gq = sink(0);
      auto gk = sink(1);
      auto gv = sink(2);
      RowMat dP(a, b);
      for (std::int64_t bi = 0; bi < nb; ++bi) {
        for (int h = 0; h < heads; ++h) {
          CMapMat P(probs.data() + (bi * heads + h) * a * b, a, b);
          CSMapMat Q(q.data().data() + bi * a * d + h * dh, a, dh, Stride(d));
          CSMapMat K(k.data().data() + bi * b * d + h * dh, b, dh, Stride(d));
          CSMapMat V(v.data().data() + bi * b * dv + h * dvh, b, dvh, Stride(dv));
          CSMapMat G(g.data() + bi * a * dv + h * dvh, a, dvh, Stride(dv));
          if (!gv.empty()) {
            SMapMat GV(gv.data() + bi * b * dv + h * dvh, b, dvh, Stride(dv));
            GV.noalias() += P.transpose() * G;
          }
          if (gq.empty() && gk.empty()) continue;
          dP.noalias() = G * V.transpose();
          for (std::int64_t r = 0; r < a; ++r) {
            double dot = 0.0;
            for (std::int64_t j = 0; j < b; ++j) dot += dP(r, j) * P(r, j);
            for (std::int64_t j = 0; j < b; ++j) dP(r, j) = P(r, j) * (dP(r, j) - dot) * sc;
          }
          if (!gq.empty()) {
            SMapMat GQ(gq.data() + bi * a * d + h * dh, a, dh, Stride(d));
            GQ.noalias() += dP * K;
          }
          if (!gk.empty()) {
            SMapMat GK(gk.data() + bi * b * d + h * dh, b, dh, Stride(d));
            GK.noalias() += dP.transpose() * Q;
          }
        }
      }
    };
  }
  return detail::finish(std::move(out_shape), std::move(out), {q, k, v}, rec, std::move(fn));
}

Tensor attention(const Tensor& x, const Tensor& y, const Tensor& z, const AttentionWeights& w, int heads) {
  if (x.dim(-1) != y.dim(-1) || y.dim(-1) != z.dim(-1)) shape_error("attention (channels)", x.shape(), y.shape());
  if (y.dim(-2) != z.dim(-2)) shape_error("attention (key/value rows)", y.shape(), z.shape());
  const auto d = w.wq.dim(-1);
  if (heads < 1 || d % heads != 0) {
    throw std::invalid_argument("attention: width " + std::to_string(d) + " not divisible by head count " +
                                std::to_string(heads));
  }
  return attention_core(matmul(x, w.wq), matmul(y, w.wk), matmul(z, w.wv), heads);
}

// ---------------------------------------------------------------------------

namespace {

struct ConvGeom {
  std::int64_t H, W, Cin, kh, kw, Cout, stride, pad, Ho, Wo;
};

ConvGeom conv_geom(const Tensor& x, const Tensor& w, int stride, int padding) {
  if (x.rank() != 3 || w.rank() != 4 || w.dim(2) != x.dim(2)) shape_error("conv2d", x.shape(), w.shape());
  ConvGeom g{};
  g.H = x.dim(0);
  g.W = x.dim(1);
  g.Cin = x.dim(2);
  g.kh = w.dim(0);
  g.kw = w.dim(1);
  g.Cout = w.dim(3);
  g.stride = stride;
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  g.pad = padding >= 0 ? padding : (stride == 1 ? (g.kh - 1) / 2 : 0);
  g.Ho = (g.H + 2 * g.pad - g.kh) / g.stride + 1;
  g.Wo = (g.W + 2 * g.pad - g.kw) / g.stride + 1;
  if (g.Ho < 1 || g.Wo < 1) shape_error("conv2d (output size)", x.shape(), w.shape());
  return g;
}

void im2col(const ConvGeom& g, const double* x, double* cols) {
  const std::int64_t K = g.kh * g.kw * g.Cin;
  for (std::int64_t i = 0; i < g.Ho; ++i) {
    for (std::int64_t j = 0; j < g.Wo; ++j) {
      double* row = cols + (i * g.Wo + j) * K;
      for (std::int64_t ki = 0; ki < g.kh; ++ki) {
        const std::int64_t yi = i * g.stride + ki - g.pad;
        for (std::int64_t kj = 0; kj < g.kw; ++kj) {
          const std::int64_t xj = j * g.stride + kj - g.pad;
          double* dst = row + (ki * g.kw + kj) * g.Cin;
          if (yi < 0 || yi >= g.H || xj < 0 || xj >= g.W) {
            std::fill(dst, dst + g.Cin, 0.0);
          } else {
            const double* src = x + (yi * g.W + xj) * g.Cin;
            std::copy(src, src + g.Cin, dst);
          }
        }
      }
    }
  }
}

void col2im_add(const ConvGeom& g, const double* cols, double* gx) {
  const std::int64_t K = g.kh * g.kw * g.Cin;
  for (std::int64_t i = 0; i < g.Ho; ++i) {
    for (std::int64_t j = 0; j < g.Wo; ++j) {
      const double* row = cols + (i * g.Wo + j) * K;
      for (std::int64_t ki = 0; ki < g.kh; ++ki) {
        const std::int64_t yi = i * g.stride + ki - g.pad;
        if (yi < 0 || yi >= g.H) continue;
        for (std::int64_t kj = 0; kj < g.kw; ++kj) {
          const std::int64_t xj = j * g.stride + kj - g.pad;
          if (xj < 0 || xj >= g.W) continue;
          const double* src = row + (ki * g.kw + kj) * g.Cin;
          double* dst = gx + (yi * g.W + xj) * g.Cin;
          for (std::int64_t c = 0; c < g.Cin; ++c) dst[c] += src[c];
        }
      }
    }
  }
}

// out[P, Cout] = cols[P, K] * w[K, Cout] + b
void gemm_bias(const double* cols, std::int64_t P, std::int64_t K, const Tensor& w, const Tensor& b, double* out,
               std::int64_t Cout) {
  MapMat O(out, P, Cout);
  O.noalias() = CMapMat(cols, P, K) * CMapMat(w.data().data(), K, Cout);
  O.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.data().data(), Cout);
}

void gemm_bias_backward(const double* cols, std::int64_t P, std::int64_t K, const Tensor& w, std::int64_t Cout,
                        std::span<const double> g, std::span<double> gw, std::span<double> gb, double* gcols) {
  CMapMat G(g.data(), P, Cout);
  if (!gw.empty()) MapMat(gw.data(), K, Cout).noalias() += CMapMat(cols, P, K).transpose() * G;
  if (!gb.empty()) add_column_sums(g.data(), P, Cout, gb.data());
  if (gcols != nullptr) MapMat(gcols, P, K).noalias() = G * CMapMat(w.data().data(), K, Cout).transpose();
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int padding) {
  const ConvGeom g = conv_geom(x, w, stride, padding);
  if (b.numel() != static_cast<std::size_t>(g.Cout)) shape_error("conv2d (bias)", w.shape(), b.shape());
  const std::int64_t P = g.Ho * g.Wo, K = g.kh * g.kw * g.Cin;
  std::vector<double> cols(static_cast<std::size_t>(P * K));
  im2col(g, x.data().data(), cols.data());
  std::vector<double> out(static_cast<std::size_t>(P * g.Cout));
  gemm_bias(cols.data(), P, K, w, b, out.data(), g.Cout);
  const bool rec = detail::needs_record({&x, &w, &b});
  BackwardFn fn;
  if (rec) {
    fn = [x, w, g, P, K](std::span<const double> grad, GradSink& sink) {
      auto gx = sink(0);
      auto gw = sink(1);
      auto gb = sink(2);
      std::vector<double> cols(static_cast<std::size_t>(P * K));
      im2col(g, x.data().data(), cols.data());
      std::vector<double> gcols;
      if (!gx.empty()) gcols.resize(cols.size());
      gemm_bias_backward(cols.data(), P, K, w, g.Cout, grad, gw, gb, gx.empty() ? nullptr : gcols.data());
      if (!gx.empty()) col2im_add(g, gcols.data(), gx.data());
    };
  }
  return detail::finish(Shape{g.Ho, g.Wo, g.Cout}, std::move(out), {x, w, b}, rec, std::move(fn));
}

Tensor conv_transpose2d(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.rank() != 3 || w.rank() != 4 || w.dim(0) != w.dim(1) || w.dim(2) != x.dim(2)) {
    shape_error("conv_transpose2d", x.shape(), w.shape());
  }
  const auto H = x.dim(0), W = x.dim(1), Cin = x.dim(2), k = w.dim(0), Cout = w.dim(3);
  if (b.numel() != static_cast<std::size_t>(Cout)) shape_error("conv_transpose2d (bias)", w.shape(), b.shape());
  const std::int64_t P = H * W;
  std::vector<double> out(static_cast<std::size_t>(P * k * k * Cout));
  RowMat tap(P, Cout);
  const auto bias = Eigen::Map<const Eigen::RowVectorXd>(b.data().data(), Cout);
  CMapMat X(x.data().data(), P, Cin);
  for (std::int64_t di = 0; di < k; ++di) {
    for (std::int64_t dj = 0; dj < k; ++dj) {
      tap.noalias() = X * CMapMat(w.data().data() + (di * k + dj) * Cin * Cout, Cin, Cout);
      for (std::int64_t i = 0; i < H; ++i)
        for (std::int64_t j = 0; j < W; ++j) {
          double* dst = out.data() + ((i * k + di) * (W * k) + (j * k + dj)) * Cout;
          Eigen::Map<Eigen::RowVectorXd>(dst, Cout) = tap.row(i * W + j) + bias;
        }
    }
  }
  const bool rec = detail::needs_record({&x, &w, &b});
  BackwardFn fn;
  if (rec) {
    fn = [x, w, H, W, Cin, k, Cout, P](std::span<const double> g, GradSink& sink) {
      auto gx = sink(0);
      auto gw = sink(1);
      auto gb = sink(2);
      RowMat gtap(P, Cout);
      CMapMat X(x.data().data(), P, Cin);
      for (std::int64_t di = 0; di < k; ++di) {
        for (std::int64_t dj = 0; dj < k; ++dj) {
          for (std::int64_t i = 0; i < H; ++i)
            for (std::int64_t j = 0; j < W; ++j)
              gtap.row(i * W + j) = Eigen::Map<const Eigen::RowVectorXd>(
                  g.data() + ((i * k + di) * (W * k) + (j * k + dj)) * Cout, Cout);
          const double* wt = w.data().data() + (di * k + dj) * Cin * Cout;
          if (!gx.empty()) MapMat(gx.data(), P, Cin).noalias() += gtap * CMapMat(wt, Cin, Cout).transpose();
          if (!gw.empty())
            MapMat(gw.data() + (di * k + dj) * Cin * Cout, Cin, Cout).noalias() += X.transpose() * gtap;
          if (!gb.empty()) add_column_sums(gtap.data(), P, Cout, gb.data());
        }
      }
    };
  }
  return detail::finish(Shape{H * k, W * k, Cout}, std::move(out), {x, w, b}, rec, std::move(fn));
}

// ---------------------------------------------------------------------------

namespace {

struct Corner {
  std::int64_t idx;  // -1 when outside
  double weight;
};

// Bilinear corners of (py, px) on an H x W grid; order 00, 01, 10, 11.
void bilinear_corners(double py, double px, std::int64_t H, std::int64_t W, Corner c[4], double& ly,
                      double& lx) {
  const double fy = std::floor(py), fx = std::floor(px);
  const auto y0 = static_cast<std::int64_t>(fy), x0 = static_cast<std::int64_t>(fx);
  ly = py - fy;
  lx = px - fx;
  const std::int64_t ys[2] = {y0, y0 + 1};
  const std::int64_t xs[2] = {x0, x0 + 1};
  const double wy[2] = {1.0 - ly, ly};
  const double wx[2] = {1.0 - lx, lx};
  for (int a = 0; a < 2; ++a)
    for (int bb = 0; bb < 2; ++bb) {
      const bool in = ys[a] >= 0 && ys[a] < H && xs[bb] >= 0 && xs[bb] < W;
      c[a * 2 + bb] = Corner{in ? ys[a] * W + xs[bb] : -1, wy[a] * wx[bb]};
    }
}

void deform_im2col(const double* x, const double* off, std::int64_t H, std::int64_t W, std::int64_t C,
                   double* cols) {
  const std::int64_t K = 9 * C;
  Corner cr[4];
  double ly, lx;
  for (std::int64_t i = 0; i < H; ++i) {
    for (std::int64_t j = 0; j < W; ++j) {
      const std::int64_t p = i * W + j;
      for (int t = 0; t < 9; ++t) {
        const double py = static_cast<double>(i + t / 3 - 1) + off[p * 18 + 2 * t];
        const double px = static_cast<double>(j + t % 3 - 1) + off[p * 18 + 2 * t + 1];
        bilinear_corners(py, px, H, W, cr, ly, lx);
        double* dst = cols + p * K + t * C;
        std::fill(dst, dst + C, 0.0);
        for (const auto& c : cr) {
          if (c.idx < 0 || c.weight == 0.0) continue;
          const double* src = x + c.idx * C;
          for (std::int64_t ch = 0; ch < C; ++ch) dst[ch] += c.weight * src[ch];
        }
      }
    }
  }
}

}  // namespace

Tensor deform_conv2d(const Tensor& x, const Tensor& offsets, const Tensor& w, const Tensor& b) {
  if (x.rank() != 3 || w.rank() != 4 || w.dim(0) != 3 || w.dim(1) != 3 || w.dim(2) != x.dim(2)) {
    shape_error("deform_conv2d", x.shape(), w.shape());
  }
  const auto H = x.dim(0), W = x.dim(1), C = x.dim(2), Cout = w.dim(3);
  if (offsets.shape() != Shape{H, W, 18}) shape_error("deform_conv2d (offsets)", x.shape(), offsets.shape());
  if (b.numel() != static_cast<std::size_t>(Cout)) shape_error("deform_conv2d (bias)", w.shape(), b.shape());
  const std::int64_t P = H * W, K = 9 * C;
  std::vector<double> cols(static_cast<std::size_t>(P * K));
  deform_im2col(x.data().data(), offsets.data().data(), H, W, C, cols.data());
  std::vector<double> out(static_cast<std::size_t>(P * Cout));
  gemm_bias(cols.data(), P, K, w, b, out.data(), Cout);
  const bool rec = detail::needs_record({&x, &offsets, &w, &b});
  BackwardFn fn;
  if (rec) {
    fn = [x, offsets, w, H, W, C, Cout, P, K](std::span<const double> g, GradSink& sink) {
      auto gx = sink(0);
      auto goff = sink(1);
      auto gw = sink(2);
      auto gb = sink(3);
      std::vector<double> cols(static_cast<std::size_t>(P * K));
      const double* xd = x.data().data();
      const double* od = offsets.data().data();
      deform_im2col(xd, od, H, W, C, cols.data());
      const bool need_cols_grad = !gx.empty() || !goff.empty();
      std::vector<double> gcols;
      if (need_cols_grad) gcols.resize(cols.size());
      gemm_bias_backward(cols.data(), P, K, w, Cout, g, gw, gb, need_cols_grad ? gcols.data() : nullptr);
      if (!need_cols_grad) return;
      Corner cr[4];
      double ly, lx;
      for (std::int64_t i = 0; i < H; ++i) {
        for (std::int64_t j = 0; j < W; ++j) {
          const std::int64_t p = i * W + j;
          for (int t = 0; t < 9; ++t) {
            const double py = static_cast<double>(i + t / 3 - 1) + od[p * 18 + 2 * t];
            const double px = static_cast<double>(j + t % 3 - 1) + od[p * 18 + 2 * t + 1];
            bilinear_corners(py, px, H, W, cr, ly, lx);
            const double* gc = gcols.data() + p * K + t * C;
            if (!gx.empty()) {
              for (const auto& c : cr) {
                if (c.idx < 0) continue;
                double* dst = gx.data() + c.idx * C;
                for (std::int64_t ch = 0; ch < C; ++ch) dst[ch] += c.weight * gc[ch];
              }
            }
            if (!goff.empty()) {
              // d(sample)/d(py) and d(sample)/d(px) from the four corners.
              const double dwy[4] = {-(1.0 - lx), -lx, 1.0 - lx, lx};
              const double dwx[4] = {-(1.0 - ly), 1.0 - ly, -ly, ly};
              double sy = 0.0, sx = 0.0;
              for (int q = 0; q < 4; ++q) {
                if (cr[q].idx < 0) continue;
                const double* src = xd + cr[q].idx * C;
                double dot = 0.0;
                for (std::int64_t ch = 0; ch < C; ++ch) dot += src[ch] * gc[ch];
                sy += dwy[q] * dot;
                sx += dwx[q] * dot;
              }
              goff[p * 18 + 2 * t] += sy;
              goff[p * 18 + 2 * t + 1] += sx;
            }
          }
        }
      }
    };
  }
  return detail::finish(Shape{H, W, Cout}, std::move(out), {x, offsets, w, b}, rec, std::move(fn));
}

Tensor avg_pool_spatial(const Tensor& x) {
  if (x.rank() != 3) throw std::invalid_argument("avg_pool_spatial expects [S, S, C], got " + shape_str(x.shape()));
  const auto c = x.dim(2);
  return reshape(mean_rows(reshape(x, Shape{x.dim(0) * x.dim(1), c})), Shape{1, 1, c});
}

Tensor bilinear_sample(const Tensor& x, const std::vector<std::pair<double, double>>& points) {
  if (x.rank() != 2) throw std::invalid_argument("bilinear_sample expects [H, W], got " + shape_str(x.shape()));
  const auto H = x.dim(0), W = x.dim(1);
  const auto n = static_cast<std::int64_t>(points.size());
  if (n == 0) throw std::invalid_argument("bilinear_sample: no points");
  std::vector<double> out(static_cast<std::size_t>(n), 0.0);
  std::vector<std::array<Corner, 4>> corners(static_cast<std::size_t>(n));
  const auto dx = x.data();
  double ly, lx;
  for (std::int64_t i = 0; i < n; ++i) {
    bilinear_corners(points[i].first, points[i].second, H, W, corners[i].data(), ly, lx);
    for (const auto& c : corners[i])
      if (c.idx >= 0) out[i] += c.weight * dx[c.idx];
  }
  const bool rec = detail::needs_record({&x});
  BackwardFn fn;
  if (rec) {
    fn = [corners = std::move(corners)](std::span<const double> g, GradSink& sink) {
      auto gx = sink(0);
      for (std::size_t i = 0; i < corners.size(); ++i)
        for (const auto& c : corners[i])
          if (c.idx >= 0) gx[c.idx] += c.weight * g[i];
    };
  }
  return detail::finish(Shape{n}, std::move(out), {x}, rec, std::move(fn));
}

Tensor init_param(Shape shape, Rng& rng, double stddev) {
  Tensor t = Tensor::randn(std::move(shape), rng, stddev);
  t.set_requires_grad(true);
  return t;
}

Tensor init_constant(Shape shape, double value) {
  Tensor t(std::move(shape), value);
  t.set_requires_grad(true);
  return t;
}

}  // namespace focrefine
