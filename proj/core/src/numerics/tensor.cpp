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

#include "focrefine/numerics/tensor.hpp"

#include <algorithm>
#include <cstring>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace focrefine {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) {
    if (d <= 0) throw std::invalid_argument("shape dimensions must be positive: " + shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor make_tensor_from_node(std::shared_ptr<detail::TensorNode> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

Tensor::Tensor(Shape shape, double fill) {
  auto node = std::make_shared<detail::TensorNode>();
  const auto n = shape_numel(shape);
  node->shape = std::move(shape);
  node->data.assign(n, fill);
  node_ = std::move(node);
}

Tensor::Tensor(Shape shape, std::vector<double> values) {
  const auto n = shape_numel(shape);
  if (values.size() != n) {
    throw std::invalid_argument("tensor data length " + std::to_string(values.size()) +
                                " does not match shape " + shape_str(shape));
  }
  auto node = std::make_shared<detail::TensorNode>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node_ = std::move(node);
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{1}, value); }

Tensor Tensor::zeros_like(const Tensor& other) { return Tensor(other.shape(), 0.0); }

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v));
}

Tensor Tensor::uniform(Shape shape, Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v));
}

static detail::TensorNode& checked(const std::shared_ptr<detail::TensorNode>& n) {
  if (!n) throw std::logic_error("use of an undefined tensor");
  return *n;
}

const Shape& Tensor::shape() const { return checked(node_).shape; }

std::int64_t Tensor::dim(int axis) const {
  const auto& s = shape();
  const int r = static_cast<int>(s.size());
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw std::out_of_range("axis out of range for shape " + shape_str(s));
  return s[static_cast<std::size_t>(axis)];
}

std::size_t Tensor::numel() const { return checked(node_).data.size(); }

std::span<const double> Tensor::data() const { return checked(node_).data; }

std::span<double> Tensor::mutable_data() { return checked(node_).data; }

double Tensor::item() const {
  if (numel() != 1) throw std::invalid_argument("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

bool Tensor::requires_grad() const { return checked(node_).requires_grad; }

Tensor& Tensor::set_requires_grad(bool value) {
  checked(node_).requires_grad = value;
  return *this;
}

bool Tensor::is_leaf() const { return checked(node_).is_leaf; }

bool Tensor::has_grad() const { return !checked(node_).grad.empty(); }

std::span<const double> Tensor::grad() const { return checked(node_).grad; }

void Tensor::zero_grad() {
  auto& n = checked(node_);
  std::lock_guard lock(n.grad_mutex);
  n.grad.clear();
}

Tensor Tensor::detach() const { return Tensor(shape(), std::vector<double>(data().begin(), data().end())); }

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  return std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(double)) == 0;
}

// ---------------------------------------------------------------------------

namespace {
thread_local GradTape* g_active_tape = nullptr;
}

GradTape* active_tape() { return g_active_tape; }

TapeScope::TapeScope(GradTape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

NoGradScope::NoGradScope() : previous_(g_active_tape) { g_active_tape = nullptr; }
NoGradScope::~NoGradScope() { g_active_tape = previous_; }

void GradTape::record(std::vector<Tensor> inputs, const Tensor& output, BackwardFn fn) {
  if (consumed_) throw std::logic_error("recording onto a consumed tape");
  records_.push_back(Record{std::move(inputs), output, std::move(fn)});
}

namespace {

class MapSink final : public GradSink {
 public:
  MapSink(std::unordered_map<detail::TensorNode*, std::vector<double>>& grads,
          const std::vector<Tensor>& inputs)
      : grads_(grads), inputs_(inputs) {}

  std::span<double> operator()(std::size_t i) override {
    auto* node = inputs_.at(i).node();
    if (!node->requires_grad) return {};
    auto& g = grads_[node];
    if (g.empty()) g.assign(node->data.size(), 0.0);
    return g;
  }
  bool wants(std::size_t i) const override { return inputs_.at(i).node()->requires_grad; }

 private:
  std::unordered_map<detail::TensorNode*, std::vector<double>>& grads_;
  const std::vector<Tensor>& inputs_;
};

}  // namespace

void backward(const Tensor& loss, GradTape& tape) {
  if (tape.consumed_) throw std::logic_error("backward on a stale tape (already replayed)");
  if (!loss.defined() || loss.numel() != 1) {
    throw std::invalid_argument("backward requires a scalar loss, got shape " +
                                (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  tape.consumed_ = true;

  std::unordered_map<detail::TensorNode*, std::vector<double>> grads;
  grads[loss.node()] = {1.0};

  for (auto it = tape.records_.rbegin(); it != tape.records_.rend(); ++it) {
    auto found = grads.find(it->output.node());
    if (found == grads.end()) continue;
    // The output's grad is final here: every consumer was recorded later.
    const std::vector<double> grad_out = std::move(found->second);
    MapSink sink(grads, it->inputs);
    it->backward(grad_out, sink);
    found = grads.find(it->output.node());
    found->second = grad_out;
  }

  for (auto& [node, g] : grads) {
    if (!node->requires_grad) continue;
    std::lock_guard lock(node->grad_mutex);
    if (node->is_leaf) {
      if (node->grad.empty()) {
        node->grad = std::move(g);
      } else {
        for (std::size_t i = 0; i < g.size(); ++i) node->grad[i] += g[i];
      }
    } else {
      node->grad = std::move(g);
    }
  }
}

namespace detail {

bool needs_record(std::initializer_list<const Tensor*> inputs) {
  if (g_active_tape == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t->defined() && t->requires_grad(); });
}

bool needs_record(const std::vector<Tensor>& inputs) {
  if (g_active_tape == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor& t) { return t.defined() && t.requires_grad(); });
}

Tensor finish(Shape shape, std::vector<double> values, std::vector<Tensor> inputs, bool record,
              BackwardFn fn) {
  Tensor out(std::move(shape), std::move(values));
  if (record) {
    out.node()->requires_grad = true;
    out.node()->is_leaf = false;
    g_active_tape->record(std::move(inputs), out, std::move(fn));
  }
  return out;
}

}  // namespace detail

}  // namespace focrefine
