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

#include "cfm/forward_models.hpp"

namespace cfm::models {

std::string_view task_name(TaskId id) {
  switch (id) {
    case TaskId::kNonlinear: return "nonlinear";
    case TaskId::kSeir: return "seir";
    case TaskId::kDarcy: return "darcy";
  }
  return "unknown";
}

TaskId parse_task(std::string_view name) {
  if (name == "nonlinear") return TaskId::kNonlinear;
  if (name == "seir") return TaskId::kSeir;
  if (name == "darcy") return TaskId::kDarcy;
  throw std::invalid_argument("unknown task '" + std::string(name) + "' (nonlinear, seir, darcy)");
}

double nonlinear_forward(double m, double e, double eta) {
  return e * e * m * m * m + m * std::exp(-std::abs(0.2 - e)) + eta;
}

std::string_view transition_name(RateTransition r) {
  return r == RateTransition::kSmooth ? "smooth" : "printed";
}

RateTransition parse_transition(std::string_view name) {
  if (name == "smooth") return RateTransition::kSmooth;
  if (name == "printed") return RateTransition::kPrinted;
  throw std::invalid_argument("unknown rate transition '" + std::string(name) + "' (smooth, printed)");
}

SeirRates seir_rates(double t, std::span<const double> m, const SeirConstants& c) {
  const double s = std::tanh(7.0 * (t - c.tau));
  const double w = c.transition == RateTransition::kSmooth ? 0.5 * (1.0 + s) : 0.5 * s;
  const double beta = m[0] + w * (m[4] - m[0]);
  const double gamma_d = m[3] + w * (m[5] - m[3]);
  return {beta, m[2] + gamma_d, gamma_d};
}

SeirState seir_rhs(double t, const SeirState& y, std::span<const double> m, const SeirConstants& c) {
  const auto r = seir_rates(t, m, c);
  const double alpha = m[1];
  const double infection = r.beta * y[0] * y[2];
  return {-infection, infection - alpha * y[1], alpha * y[1] - r.gamma * y[2], r.gamma * y[2]};
}

namespace {

SeirState axpy(const SeirState& y, double a, const SeirState& k) {
  return {y[0] + a * k[0], y[1] + a * k[1], y[2] + a * k[2], y[3] + a * k[3]};
}

std::string describe(double t, std::span<const double> m) {
  std::ostringstream os;
  os << "t=" << t << " m=[";
  for (std::size_t i = 0; i < m.size(); ++i) os << (i ? ", " : "") << m[i];
  os << ']';
  return os.str();
}

}  // namespace

SeirTrajectory seir_solve(std::span<const double> m, const SeirConstants& c) {
  if (m.size() != kSeirParams) {
    throw std::invalid_argument("seir_solve: expected 6 parameters, got " + std::to_string(m.size()));
  }
  const auto steps = static_cast<std::size_t>(std::llround(c.t_end / c.dt));
  std::vector<SeirState> states;
  states.reserve(steps + 1);
  SeirState y = c.initial;
  states.push_back(y);
  const double dt = c.dt;
  for (std::size_t k = 0; k < steps; ++k) {
    const double t = static_cast<double>(k) * dt;
    const auto k1 = seir_rhs(t, y, m, c);
    const auto k2 = seir_rhs(t + 0.5 * dt, axpy(y, 0.5 * dt, k1), m, c);
    const auto k3 = seir_rhs(t + 0.5 * dt, axpy(y, 0.5 * dt, k2), m, c);
    const auto k4 = seir_rhs(t + dt, axpy(y, dt, k3), m, c);
    for (int i = 0; i < 4; ++i) y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    for (double v : y) {
      if (!std::isfinite(v)) throw SolverError("seir_solve: non-finite state at " + describe(t + dt, m));
    }
    states.push_back(y);
  }
  return SeirTrajectory(dt, std::move(states));
}

SeirState SeirTrajectory::at(double t) const {
  if (!(t >= 0.0) || t > t_end() + 1e-12) {
    throw std::out_of_range("SEIR trajectory queried at t=" + std::to_string(t));
  }
  const double pos = t / dt_;
  auto k = static_cast<std::size_t>(pos);
  if (k >= states_.size() - 1) return states_.back();
  const double w = pos - static_cast<double>(k);
  const auto& a = states_[k];
  const auto& b = states_[k + 1];
  return {a[0] + w * (b[0] - a[0]), a[1] + w * (b[1] - a[1]), a[2] + w * (b[2] - a[2]),
          a[3] + w * (b[3] - a[3])};
}

std::vector<double> seir_observe(const SeirTrajectory& traj, std::span<const double> times,
                                 std::span<const double> eta, const SeirConstants& c) {
  if (!eta.empty() && eta.size() != 2 * times.size()) {
    throw std::invalid_argument("seir_observe: noise length must be twice the number of times");
  }
  std::vector<double> d(2 * times.size());
  for (std::size_t i = 0; i < times.size(); ++i) {
    const double t = times[i];
    if (!(t >= c.observe_min && t <= c.observe_max)) {
      throw std::out_of_range("seir_observe: time " + std::to_string(t) + " outside [" +
                              std::to_string(c.observe_min) + ", " + std::to_string(c.observe_max) + "]");
    }
    const auto s = traj.at(t);
    d[2 * i] = s[2] + (eta.empty() ? 0.0 : eta[2 * i]);
    d[2 * i + 1] = s[3] + (eta.empty() ? 0.0 : eta[2 * i + 1]);
  }
  return d;
}

}  // namespace cfm::models
