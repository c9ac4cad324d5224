// Copyright 2026 The cfm-inverse Authors.
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

// Dense tensors with define-by-run reverse-mode differentiation.
//
// Everything is templated on the element type. Training and inference run in
// float; the double instantiation exists so gradient checks can compare the
// analytic backward pass with central differences at full precision.
//
// A Tape records one forward pass. Ops append nodes in execution order, so the
// node vector is a valid topological order and backward is a reverse sweep.
// Parameters live outside the tape in a ParameterSet; backward deposits their
// gradients there and refuses to overwrite gradients that were not cleared.

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace cfm::ad {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class GradientError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

template <typename Scalar>
struct Tensor {
  Shape shape;
  std::vector<Scalar> data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)), data(shape_numel(shape)) {}
  Tensor(Shape s, std::vector<Scalar> values);

  std::size_t numel() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t axis) const { return shape.at(axis); }
  Scalar& operator[](std::size_t i) { return data[i]; }
  const Scalar& operator[](std::size_t i) const { return data[i]; }
};

template <typename Scalar>
struct Parameter {
  std::string name;
  Tensor<Scalar> value;
  std::vector<Scalar> grad;
  // Set by backward, cleared by zero_grad.
  bool grad_pending = false;
};

template <typename Scalar>
class ParameterSet {
 public:
  // Throws std::invalid_argument on a duplicate name.
  Parameter<Scalar>& add(std::string name, Shape shape);
  Parameter<Scalar>& at(std::string_view name);
  const Parameter<Scalar>& at(std::string_view name) const;
  bool contains(std::string_view name) const;

  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;
  void zero_grad();

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  Parameter<Scalar>& operator[](std::size_t i) { return params_[i]; }
  const Parameter<Scalar>& operator[](std::size_t i) const { return params_[i]; }

 private:
  // deque keeps references stable across add().
  std::deque<Parameter<Scalar>> params_;
};

// Element-type conversion of a whole parameter set (values only).
template <typename To, typename From>
ParameterSet<To> cast_parameters(const ParameterSet<From>& from) {
  ParameterSet<To> out;
  for (const auto& p : from) {
    auto& q = out.add(p.name, p.value.shape);
    for (std::size_t i = 0; i < p.value.numel(); ++i) {
      q.value.data[i] = static_cast<To>(p.value.data[i]);
    }
  }
  return out;
}

template <typename Scalar>
class Tape;

// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
template <typename Scalar>
class Var {
 public:
  Var() = default;
  Var(Tape<Scalar>* tape, int id) : tape_(tape), id_(id) {}

  Tape<Scalar>& tape() const { return *tape_; }
  int id() const { return id_; }
  const Tensor<Scalar>& value() const;
  const Shape& shape() const { return value().shape; }
  std::size_t numel() const { return value().numel(); }
  bool requires_grad() const;
  // Gradient after backward; empty if the node never received one.
  const std::vector<Scalar>& grad() const;

 private:
  Tape<Scalar>* tape_ = nullptr;
  int id_ = -1;
};

template <typename Scalar>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const std::vector<Scalar>& out_grad)>;

  struct Node {
    Tensor<Scalar> value;
    std::vector<Scalar> grad;
    bool requires_grad = false;
    Parameter<Scalar>* param = nullptr;
    BackwardFn backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<Scalar> constant(Tensor<Scalar> value);
  // Free leaf that receives a gradient (used by gradient checks).
  Var<Scalar> variable(Tensor<Scalar> value);
  // Leaf bound to a parameter; one node per parameter per tape.
  Var<Scalar> param(Parameter<Scalar>& p);
  Var<Scalar> record(Tensor<Scalar> value, bool requires_grad, BackwardFn backward);

  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  bool requires_grad(int id) const { return node(id).requires_grad; }
  const Tensor<Scalar>& value(int id) const { return node(id).value; }
  // Gradient accumulator of a node, zero-initialized on first access.
  std::vector<Scalar>& grad_buffer(int id);
  std::size_t size() const { return nodes_.size(); }

  // Reverse sweep from a scalar loss. Parameter gradients are written into
  // their ParameterSet; a parameter whose previous gradient was not cleared
  // with zero_grad() raises GradientError. A tape can be swept once.
  void backward(Var<Scalar> loss);

 private:
  // deque: references returned by value() stay valid as the tape grows.
  std::deque<Node> nodes_;
  std::unordered_map<Parameter<Scalar>*, int> param_nodes_;
  bool swept_ = false;
};

// ---- ops ------------------------------------------------------------------

// a[..., k] x b[k, n] -> [..., n]. Leading axes of `a` are flattened.
template <typename Scalar>
Var<Scalar> matmul(Var<Scalar> a, Var<Scalar> b);

// a[g, m, k] x b[g, k, n] -> [g, m, n]; with transpose_b, b is [g, n, k].
template <typename Scalar>
Var<Scalar> batched_matmul(Var<Scalar> a, Var<Scalar> b, bool transpose_b);

template <typename Scalar>
Var<Scalar> add(Var<Scalar> a, Var<Scalar> b);
template <typename Scalar>
Var<Scalar> sub(Var<Scalar> a, Var<Scalar> b);
template <typename Scalar>
Var<Scalar> mul(Var<Scalar> a, Var<Scalar> b);
template <typename Scalar>
Var<Scalar> scale(Var<Scalar> a, Scalar factor);

// x[..., c] + bias[c].
template <typename Scalar>
Var<Scalar> add_bias(Var<Scalar> x, Var<Scalar> bias);
// x[b, t, c] + y[b, c], broadcast over t.
template <typename Scalar>
Var<Scalar> add_per_row(Var<Scalar> x, Var<Scalar> y);

template <typename Scalar>
Var<Scalar> relu_squared(Var<Scalar> x);
template <typename Scalar>
Var<Scalar> square(Var<Scalar> x);

// x / sqrt(mean(x^2) + eps) * gain over the last axis.
template <typename Scalar>
Var<Scalar> rms_norm(Var<Scalar> x, Var<Scalar> gain, Scalar eps);
template <typename Scalar>
Var<Scalar> softmax_lastdim(Var<Scalar> x);

// Rotary embedding on x[..., t, head_dim]; positions has one entry per t.
template <typename Scalar>
Var<Scalar> rope(Var<Scalar> x, std::span<const int> positions, double base);

template <typename Scalar>
Var<Scalar> reshape(Var<Scalar> x, Shape shape);
// [a, b, c, d] -> [a, c, b, d]
template <typename Scalar>
Var<Scalar> swap_axes_12(Var<Scalar> x);
// x[b, t, c] -> [b, c] at token index.
template <typename Scalar>
Var<Scalar> select_token(Var<Scalar> x, std::size_t index);
// Concatenate [b, t_i, c] along axis 1.
template <typename Scalar>
Var<Scalar> concat_tokens(std::span<const Var<Scalar>> parts);
// Concatenate [b, c_i] along the last axis.
template <typename Scalar>
Var<Scalar> concat_features(std::span<const Var<Scalar>> parts);

template <typename Scalar>
Var<Scalar> sum_all(Var<Scalar> x);
template <typename Scalar>
Var<Scalar> mean_all(Var<Scalar> x);
template <typename Scalar>
Var<Scalar> mse(Var<Scalar> prediction, Var<Scalar> target);

// ---- optimizer --------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename Scalar>
struct AdamState {
  AdamConfig config;
  std::vector<std::vector<Scalar>> first_moment;
  std::vector<std::vector<Scalar>> second_moment;
  long step = 0;

  AdamState() = default;
  AdamState(const ParameterSet<Scalar>& params, AdamConfig cfg);
};

// One bias-corrected Adam update; grads[i] pairs with params[i].
template <typename Scalar>
void adam_step(ParameterSet<Scalar>& params, std::span<const std::vector<Scalar>> grads,
               AdamState<Scalar>& state);

}  // namespace cfm::ad
