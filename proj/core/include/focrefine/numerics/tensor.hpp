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

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace focrefine {

using Shape = std::vector<std::int64_t>;
using Rng = std::mt19937_64;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class GradTape;

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a backward pass populates it
  bool requires_grad = false;
  bool is_leaf = true;
  std::mutex grad_mutex;  // leaves may receive grads from tapes on several threads
};

}  // namespace detail

/// Dense row-major n-d array of doubles with optional gradient tracking.
///
/// A Tensor is a cheap handle; copies share the underlying node. Values
/// produced by operations are never mutated afterwards. Leaves (parameters,
/// inputs) may be written through mutable_data() by their owner, e.g. an
/// optimizer step.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value);
  static Tensor zeros_like(const Tensor& other);
  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0);
  static Tensor uniform(Shape shape, Rng& rng, double lo, double hi);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int rank() const { return static_cast<int>(shape().size()); }
  // Negative axes count from the back.
  std::int64_t dim(int axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double item() const;
  double operator[](std::size_t i) const { return data()[i]; }

  bool requires_grad() const;
  Tensor& set_requires_grad(bool value);
  bool is_leaf() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  // Copy of the values without gradient history.
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  // Identity of the underlying storage; equal handles share it.
  const void* id() const { return node_.get(); }

  detail::TensorNode* node() const { return node_.get(); }

 private:
  friend Tensor make_tensor_from_node(std::shared_ptr<detail::TensorNode>);
  std::shared_ptr<detail::TensorNode> node_;
};

bool bit_equal(const Tensor& a, const Tensor& b);

// ---------------------------------------------------------------------------
// Reverse-mode recording
// ---------------------------------------------------------------------------

/// Hands out gradient accumulators for the inputs of one recorded op.
class GradSink {
 public:
  virtual ~GradSink() = default;
  // Empty span when input `i` does not need a gradient.
  virtual std::span<double> operator()(std::size_t i) = 0;
  virtual bool wants(std::size_t i) const = 0;
};

using BackwardFn = std::function<void(std::span<const double> grad_out, GradSink& sink)>;

/// Ordered record of differentiable operations for one forward pass.
/// Confined to the thread that created it.
class GradTape {
 public:
  GradTape() = default;
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  struct Record {
    std::vector<Tensor> inputs;
    Tensor output;
    BackwardFn backward;
  };

  void record(std::vector<Tensor> inputs, const Tensor& output, BackwardFn fn);
  std::size_t size() const { return records_.size(); }
  bool consumed() const { return consumed_; }

 private:
  friend void backward(const Tensor& loss, GradTape& tape);
  std::vector<Record> records_;
  bool consumed_ = false;
};

/// Makes `tape` the recording target for this thread while in scope.
class TapeScope {
 public:
  explicit TapeScope(GradTape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  GradTape* previous_;
};

/// Suspends recording on this thread while in scope.
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  GradTape* previous_;
};

GradTape* active_tape();

/// Replays `tape` in reverse, accumulating d(loss)/d(leaf) into every
/// requires_grad leaf. A tape can be replayed once.
void backward(const Tensor& loss, GradTape& tape);

namespace detail {

// True when an op over `inputs` must be recorded on the active tape.
bool needs_record(std::initializer_list<const Tensor*> inputs);
bool needs_record(const std::vector<Tensor>& inputs);

// Wraps freshly computed values; records `fn` when `record` is true.
Tensor finish(Shape shape, std::vector<double> values, std::vector<Tensor> inputs, bool record,
              BackwardFn fn);

}  // namespace detail

}  // namespace focrefine
