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

#include <algorithm>
#include <cmath>
#include <limits>

#include "cfm/forward_models.hpp"

namespace cfm::models {

TaskSpec TaskSpec::nonlinear(NoiseConfig noise) {
  TaskSpec t;
  t.id_ = TaskId::kNonlinear;
  t.dim_m_ = 1;
  t.noise_ = noise;
  return t;
}

TaskSpec TaskSpec::seir(SeirConstants c, NoiseConfig noise) {
  TaskSpec t;
  t.id_ = TaskId::kSeir;
  t.dim_m_ = kSeirParams;
  t.seir_ = c;
  t.noise_ = noise;
  return t;
}

TaskSpec TaskSpec::darcy(std::shared_ptr<const KlBasis> basis, NoiseConfig noise) {
  if (!basis) throw std::invalid_argument("TaskSpec::darcy: null KL basis");
  TaskSpec t;
  t.id_ = TaskId::kDarcy;
  t.dim_m_ = static_cast<std::size_t>(basis->modes());
  t.kl_ = std::move(basis);
  t.noise_ = noise;
  return t;
}

std::size_t TaskSpec::n_obs_from_e(std::size_t len) const {
  if (len < shared_design_len() || (len - shared_design_len()) % design_per_obs() != 0) {
    throw std::invalid_argument("design vector of length " + std::to_string(len) + " does not fit task " +
                                std::string(task_name(id_)));
  }
  return (len - shared_design_len()) / design_per_obs();
}

const KlBasis& TaskSpec::kl_basis() const {
  if (!kl_) throw std::logic_error("task " + std::string(task_name(id_)) + " has no KL basis");
  return *kl_;
}

const DarcyConstants& TaskSpec::darcy_constants() const { return kl_basis().constants; }

void TaskSpec::sample_prior(Rng& rng, std::span<double> m) const {
  if (m.size() != dim_m_) throw std::invalid_argument("sample_prior: wrong parameter length");
  for (auto& v : m) v = uniform_prior() ? rng.uniform() : rng.normal();
}

bool TaskSpec::in_support(std::span<const double> m) const {
  if (m.size() != dim_m_) return false;
  for (double v : m) {
    if (!std::isfinite(v)) return false;
    if (uniform_prior() && (v < 0.0 || v > 1.0)) return false;
  }
  return true;
}

void TaskSpec::project_to_support(std::span<double> m) const {
  if (m.size() != dim_m_) throw std::invalid_argument("project_to_support: wrong parameter length");
  if (!uniform_prior()) return;
  for (auto& v : m) v = std::clamp(v, 0.0, 1.0);
}

double TaskSpec::log_prior(std::span<const double> m) const {
  if (!in_support(m)) return -std::numeric_limits<double>::infinity();
  if (uniform_prior()) return 0.0;
  double s = 0.0;
  for (double v : m) s += v * v;
  return -0.5 * s;
}

void TaskSpec::sample_design(Rng& rng, std::size_t n_obs, std::span<double> e) const {
  if (e.size() != e_len(n_obs)) throw std::invalid_argument("sample_design: wrong design length");
  switch (id_) {
    case TaskId::kNonlinear:
      for (auto& v : e) v = rng.uniform();
      break;
    case TaskId::kSeir:
      for (auto& v : e) v = rng.uniform(seir_.observe_min, seir_.observe_max);
      break;
    case TaskId::kDarcy: {
      const double h = darcy_constants().h();
      e[0] = rng.uniform();
      e[1] = rng.uniform();
      for (std::size_t k = 2; k < e.size(); ++k) e[k] = rng.uniform(h, 1.0 - h);
      break;
    }
  }
}

SolvedModel TaskSpec::solve(std::span<const double> m, std::span<const double> shared_design) const {
  if (m.size() != dim_m_) throw std::invalid_argument("solve: wrong parameter length");
  switch (id_) {
    case TaskId::kNonlinear:
      return m[0];
    case TaskId::kSeir:
      return seir_solve(m, seir_);
    case TaskId::kDarcy: {
      if (shared_design.size() != 2) throw std::invalid_argument("solve: darcy needs the boundary design (e1, e2)");
      auto log_k = kl_expand(*kl_, m);
      for (auto& v : log_k.values) v = std::exp(v);
      DarcySolved s{darcy_solve(log_k, shared_design[0], shared_design[1], kl_->constants), 0.0};
      for (double v : s.u.values) s.max_abs = std::max(s.max_abs, std::abs(v));
      return s;
    }
  }
  throw std::logic_error("solve: unknown task");
}

std::vector<double> TaskSpec::observe(const SolvedModel& s, std::span<const double> e, std::size_t n_obs) const {
  if (e.size() != e_len(n_obs)) throw std::invalid_argument("observe: wrong design length");
  switch (id_) {
    case TaskId::kNonlinear: {
      const double m = std::get<double>(s);
      std::vector<double> d(n_obs);
      for (std::size_t i = 0; i < n_obs; ++i) d[i] = nonlinear_forward(m, e[i], 0.0);
      return d;
    }
    case TaskId::kSeir:
      return seir_observe(std::get<SeirTrajectory>(s), e, {}, seir_);
    case TaskId::kDarcy:
      return darcy_observe(std::get<DarcySolved>(s).u, e.subspan(2), {});
  }
  throw std::logic_error("observe: unknown task");
}

std::vector<double> TaskSpec::forward(std::span<const double> m, std::span<const double> e, std::size_t n_obs) const {
  if (e.size() != e_len(n_obs)) throw std::invalid_argument("forward: wrong design length");
  return observe(solve(m, e.first(shared_design_len())), e, n_obs);
}

double TaskSpec::noise_sigma(const SolvedModel& s) const {
  switch (id_) {
    case TaskId::kNonlinear: return noise_.nonlinear;
    case TaskId::kSeir: return noise_.seir;
    case TaskId::kDarcy: return noise_.darcy_relative * std::get<DarcySolved>(s).max_abs;
  }
  return 0.0;
}

std::vector<double> TaskSpec::full_solution(std::span<const double> m, std::span<const double> shared_design) const {
  switch (id_) {
    case TaskId::kNonlinear: {
      std::vector<double> out(101);
      for (int i = 0; i <= 100; ++i) out[i] = nonlinear_forward(m[0], i / 100.0, 0.0);
      return out;
    }
    case TaskId::kSeir: {
      const auto traj = seir_solve(m, seir_);
      constexpr int kPoints = 256;
      std::vector<double> out;
      out.reserve(4 * kPoints);
      for (int i = 0; i < kPoints; ++i) {
        const auto y = traj.at(traj.t_end() * i / (kPoints - 1));
        out.insert(out.end(), y.begin(), y.end());
      }
      return out;
    }
    case TaskId::kDarcy:
      return std::get<DarcySolved>(solve(m, shared_design)).u.values;
  }
  throw std::logic_error("full_solution: unknown task");
}

}  // namespace cfm::models
