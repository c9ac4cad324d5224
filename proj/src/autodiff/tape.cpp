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

#include <cmath>
#include <sstream>

#include "cfm/autodiff.hpp"

namespace cfm::ad {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
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

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape s, std::vector<Scalar> values)
    : shape(std::move(s)), data(std::move(values)) {
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("tensor of shape " + shape_str(shape) + " given " +
                     std::to_string(data.size()) + " elements");
  }
  for (auto d : shape) {
    if (d == 0) throw ShapeError("zero-sized axis in shape " + shape_str(shape));
  }
}

// ---- ParameterSet ----

template <typename Scalar>
Parameter<Scalar>& ParameterSet<Scalar>::add(std::string name, Shape shape) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  Parameter<Scalar> p;
  p.name = std::move(name);
  p.value = Tensor<Scalar>(std::move(shape));
  p.grad.assign(p.value.numel(), Scalar(0));
  params_.push_back(std::move(p));
  return params_.back();
}

template <typename Scalar>
Parameter<Scalar>& ParameterSet<Scalar>::at(std::string_view name) {
  for (auto& p : params_) {
    if (p.name == name) return p;
  }
  throw std::out_of_range("no parameter named " + std::string(name));
}

template <typename Scalar>
const Parameter<Scalar>& ParameterSet<Scalar>::at(std::string_view name) const {
  for (const auto& p : params_) {
    if (p.name == name) return p;
  }
  throw std::out_of_range("no parameter named " + std::string(name));
}

template <typename Scalar>
bool ParameterSet<Scalar>::contains(std::string_view name) const {
  for (const auto& p : params_) {
    if (p.name == name) return true;
  }
  return false;
}

template <typename Scalar>
std::size_t ParameterSet<Scalar>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

template <typename Scalar>
void ParameterSet<Scalar>::zero_grad() {
  for (auto& p : params_) {
    std::fill(p.grad.begin(), p.grad.end(), Scalar(0));
    p.grad_pending = false;
  }
}

// ---- Var ----

template <typename Scalar>
const Tensor<Scalar>& Var<Scalar>::value() const {
  return tape_->value(id_);
}

template <typename Scalar>
bool Var<Scalar>::requires_grad() const {
  return tape_->requires_grad(id_);
}

template <typename Scalar>
const std::vector<Scalar>& Var<Scalar>::grad() const {
  return tape_->node(id_).grad;
}

// ---- Tape ----

template <typename Scalar>
Var<Scalar> Tape<Scalar>::constant(Tensor<Scalar> value) {
  return record(std::move(value), false, nullptr);
}

template <typename Scalar>
Var<Scalar> Tape<Scalar>::variable(Tensor<Scalar> value) {
  return record(std::move(value), true, nullptr);
}

template <typename Scalar>
Var<Scalar> Tape<Scalar>::param(Parameter<Scalar>& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) {
    return Var<Scalar>(this, it->second);
  }
  Var<Scalar> v = record(p.value, true, nullptr);
  nodes_.back().param = &p;
  param_nodes_.emplace(&p, v.id());
  return v;
}

template <typename Scalar>
Var<Scalar> Tape<Scalar>::record(Tensor<Scalar> value, bool requires_grad, BackwardFn backward) {
  if (swept_) throw GradientError("cannot record on a tape after backward");
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var<Scalar>(this, static_cast<int>(nodes_.size() - 1));
}

template <typename Scalar>
std::vector<Scalar>& Tape<Scalar>::grad_buffer(int id) {
  auto& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.empty()) n.grad.assign(n.value.numel(), Scalar(0));
  return n.grad;
}

template <typename Scalar>
void Tape<Scalar>::backward(Var<Scalar> loss) {
  if (&loss.tape() != this) throw GradientError("loss belongs to a different tape");
  if (loss.numel() != 1) {
    throw GradientError("backward needs a scalar loss, got shape " + shape_str(loss.shape()));
  }
  if (swept_) throw GradientError("backward already ran on this tape");
  for (const auto& [p, id] : param_nodes_) {
    if (p->grad_pending) {
      throw GradientError("gradient of parameter '" + p->name +
                          "' was not cleared before backward; call zero_grad()");
    }
  }
  swept_ = true;
  if (!loss.requires_grad()) {
    for (const auto& [p, id] : param_nodes_) {
      std::fill(p->grad.begin(), p->grad.end(), Scalar(0));
      p->grad_pending = true;
    }
    return;
  }
  grad_buffer(loss.id())[0] = Scalar(1);
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
    n.backward(*this, n.grad);
  }
  for (auto& n : nodes_) {
    if (n.param == nullptr) continue;
    if (n.grad.empty()) {
      std::fill(n.param->grad.begin(), n.param->grad.end(), Scalar(0));
    } else {
      n.param->grad = n.grad;
    }
    n.param->grad_pending = true;
  }
}

// ---- Adam ----

template <typename Scalar>
AdamState<Scalar>::AdamState(const ParameterSet<Scalar>& params, AdamConfig cfg) : config(cfg) {
  for (const auto& p : params) {
    first_moment.emplace_back(p.value.numel(), Scalar(0));
    second_moment.emplace_back(p.value.numel(), Scalar(0));
  }
}

template <typename Scalar>
void adam_step(ParameterSet<Scalar>& params, std::span<const std::vector<Scalar>> grads,
               AdamState<Scalar>& state) {
  if (grads.size() != params.size() || state.first_moment.size() != params.size()) {
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " parameters, " +
                     std::to_string(grads.size()) + " gradients, " +
                     std::to_string(state.first_moment.size()) + " moment buffers");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto n = params[k].value.numel();
    if (grads[k].size() != n || state.first_moment[k].size() != n ||
        state.second_moment[k].size() != n) {
      throw ShapeError("adam_step: size mismatch for parameter '" + params[k].name + "'");
    }
  }
  state.step += 1;
  const auto& c = state.config;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  const auto b1 = static_cast<Scalar>(c.beta1);
  const auto b2 = static_cast<Scalar>(c.beta2);
  const auto step_size = static_cast<Scalar>(c.lr / bc1);
  const auto inv_sqrt_bc2 = static_cast<Scalar>(1.0 / std::sqrt(bc2));
  const auto eps = static_cast<Scalar>(c.eps);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& w = params[k].value.data;
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    const auto& g = grads[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (Scalar(1) - b1) * g[i];
      v[i] = b2 * v[i] + (Scalar(1) - b2) * g[i] * g[i];
      w[i] -= step_size * m[i] / (std::sqrt(v[i]) * inv_sqrt_bc2 + eps);
    }
  }
}

template struct Tensor<float>;
template struct Tensor<double>;
template class ParameterSet<float>;
template class ParameterSet<double>;
template class Var<float>;
template class Var<double>;
template class Tape<float>;
template class Tape<double>;
template struct AdamState<float>;
template struct AdamState<double>;
template void adam_step(ParameterSet<float>&, std::span<const std::vector<float>>,
                        AdamState<float>&);
template void adam_step(ParameterSet<double>&, std::span<const std::vector<double>>,
                        AdamState<double>&);

}  // namespace cfm::ad
