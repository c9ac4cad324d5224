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

// Forward models d = F(m, e) + noise and their priors for the three inverse
// problems: a scalar closed-form map, an SEIR epidemic ODE and steady Darcy
// flow with a Karhunen-Loeve log-permeability prior.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "cfm/rng.hpp"

namespace cfm::models {

class SolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class TaskId : std::uint8_t { kNonlinear = 0, kSeir = 1, kDarcy = 2 };

std::string_view task_name(TaskId id);
TaskId parse_task(std::string_view name);

// ---- nonlinear -------------------------------------------------------------

// e^2 m^3 + m exp(-|0.2 - e|) + eta
double nonlinear_forward(double m, double e, double eta);

// ---- SEIR ------------------------------------------------------------------

enum class RateTransition {
  // beta(t) = beta1 + (1 + tanh(7(t - tau)))/2 (beta2 - beta1): goes from
  // beta1 to beta2 and keeps every rate inside [0, 1].
  kSmooth,
  // beta(t) = beta1 + tanh(7(t - tau))/2 (beta2 - beta1), literally. Rates
  // can go negative before tau.
  kPrinted,
};

std::string_view transition_name(RateTransition r);
RateTransition parse_transition(std::string_view name);

struct SeirConstants {
  double tau = 2.1;
  double t_end = 4.0;
  double dt = 1.0 / 256.0;
  std::array<double, 4> initial{99.0, 1.0, 0.0, 0.0};
  RateTransition transition = RateTransition::kSmooth;
  double observe_min = 1.0;
  double observe_max = 3.0;
};

// m = [beta1, alpha, gamma_r, gamma_d1, beta2, gamma_d2]
inline constexpr std::size_t kSeirParams = 6;

struct SeirRates {
  double beta;
  double gamma;    // gamma_r + gamma_d
  double gamma_d;
};

SeirRates seir_rates(double t, std::span<const double> m, const SeirConstants& c);

using SeirState = std::array<double, 4>;  // S, E, I, R

SeirState seir_rhs(double t, const SeirState& y, std::span<const double> m, const SeirConstants& c);

// RK4 solution stored at every step; values in between are linear.
class SeirTrajectory {
 public:
  SeirTrajectory(double dt, std::vector<SeirState> states) : dt_(dt), states_(std::move(states)) {}

  SeirState at(double t) const;
  std::span<const SeirState> steps() const { return states_; }
  double dt() const { return dt_; }
  double t_end() const { return dt_ * static_cast<double>(states_.size() - 1); }

 private:
  double dt_;
  std::vector<SeirState> states_;
};

// Throws SolverError on a non-finite state, naming t and m.
SeirTrajectory seir_solve(std::span<const double> m, const SeirConstants& c);

// Rows (I, R) at each time, flattened, plus noise. Times must lie in
// [observe_min, observe_max].
std::vector<double> seir_observe(const SeirTrajectory& traj, std::span<const double> times,
                                 std::span<const double> eta, const SeirConstants& c);

// ---- Darcy -----------------------------------------------------------------

enum class DarcyLinearSolver {
  kConjugateGradient,  // incomplete-Cholesky preconditioned CG
  kCholesky,           // sparse LDL^T; same residual contract, faster on one core
};

std::string_view linear_solver_name(DarcyLinearSolver s);
DarcyLinearSolver parse_linear_solver(std::string_view name);

struct DarcyConstants {
  int nodes_per_side = 65;        // h = 1/64
  double sigma_v = 1.0;
  double length_scale_sq = 0.1;   // l^2
  int n_modes = 16;
  double boundary_width = 0.05;   // sigma_w
  double cg_tolerance = 1e-10;
  int cg_max_iterations = 100000;
  DarcyLinearSolver linear_solver = DarcyLinearSolver::kConjugateGradient;

  double h() const { return 1.0 / (nodes_per_side - 1); }
  std::size_t node_count() const {
    return static_cast<std::size_t>(nodes_per_side) * static_cast<std::size_t>(nodes_per_side);
  }
};

// Node (i, j) sits at (x, y) = (i h, j h); storage index i * n + j.
struct Field2D {
  int n = 0;
  std::vector<double> values;

  Field2D() = default;
  explicit Field2D(int nodes, double fill = 0.0)
      : n(nodes), values(static_cast<std::size_t>(nodes) * nodes, fill) {}

  double h() const { return 1.0 / (n - 1); }
  double& at(int i, int j) { return values[static_cast<std::size_t>(i) * n + j]; }
  double at(int i, int j) const { return values[static_cast<std::size_t>(i) * n + j]; }
};

double squared_exponential(double x1, double y1, double x2, double y2, double sigma_v, double ell2);

struct KlBasis {
  DarcyConstants constants;
  std::vector<double> eigenvalues;      // descending, n_modes
  std::vector<double> eigenfunctions;   // n_modes x node_count, sum phi^2 h^2 = 1
  double total_variance = 0;            // trace of the h^2-weighted kernel matrix

  int modes() const { return static_cast<int>(eigenvalues.size()); }
  std::span<const double> mode(int k) const {
    const auto n = constants.node_count();
    return {eigenfunctions.data() + static_cast<std::size_t>(k) * n, n};
  }
  double captured_fraction() const;
};

// Dense kernel assembly on the grid and a partial symmetric eigensolve
// (block subspace iteration, converged on the eigen-residual).
KlBasis kl_basis_build(const DarcyConstants& c);

inline constexpr std::uint32_t kKlCacheVersion = 1;
void save_kl_basis(const KlBasis& basis, const std::filesystem::path& path);
KlBasis load_kl_basis(const std::filesystem::path& path);
std::string kl_cache_name(const DarcyConstants& c);
// Reads the cached basis for `c` from `dir`, building and writing it if absent.
KlBasis load_or_build_kl_basis(const DarcyConstants& c, const std::filesystem::path& dir);

// ||K - sum lambda phi phi^T||_F / ||K||_F over the full node set.
double kl_frobenius_error(const KlBasis& basis);

// log kappa = sum_i m_i sqrt(lambda_i) phi_i
Field2D kl_expand(const KlBasis& basis, std::span<const double> m);

struct SolveStats {
  int iterations = 0;
  double relative_residual = 0;
};

// -div(kappa grad u) = 0 with u = left(y) on x = 0, u = right(y) on x = 1 and
// zero flux on y = 0, 1. Node-centred finite volumes with harmonic-mean face
// transmissibilities. Either solver must reach relative residual
// c.cg_tolerance or SolverError is thrown.
Field2D solve_darcy_dirichlet(const Field2D& kappa, const std::function<double(double)>& left,
                              const std::function<double(double)>& right, const DarcyConstants& c,
                              SolveStats* stats = nullptr);

double boundary_bump(double y, double center, double width);

Field2D darcy_solve(const Field2D& kappa, double e1, double e2, const DarcyConstants& c,
                    SolveStats* stats = nullptr);

double bilinear(const Field2D& u, double x, double y);

// points = [x0, y0, x1, y1, ...]
std::vector<double> darcy_observe(const Field2D& u, std::span<const double> points,
                                  std::span<const double> eta);

// ---- task interface ----------------------------------------------------------

struct NoiseConfig {
  double nonlinear = 0.01;
  double seir = 0.5;
  double darcy_relative = 0.01;  // times max |u|
};

struct DarcySolved {
  Field2D u;
  double max_abs = 0;
};

// One forward solve: everything that depends on m and the per-tuple design
// but not on where observations are taken.
using SolvedModel = std::variant<double, SeirTrajectory, DarcySolved>;

// Layouts per tuple with n observations:
//   nonlinear  e = [e_1..e_n]                          d = [d_1..d_n]
//   seir       e = [t_1..t_n]                          d = [I_1, R_1, ..., I_n, R_n]
//   darcy      e = [e1, e2, x_1, y_1, ..., x_n, y_n]   d = [u_1..u_n]
class TaskSpec {
 public:
  static TaskSpec nonlinear(NoiseConfig noise = {});
  static TaskSpec seir(SeirConstants c = {}, NoiseConfig noise = {});
  static TaskSpec darcy(std::shared_ptr<const KlBasis> basis, NoiseConfig noise = {});

  TaskId id() const { return id_; }
  std::size_t dim_m() const { return dim_m_; }
  std::size_t shared_design_len() const { return id_ == TaskId::kDarcy ? 2 : 0; }
  std::size_t design_per_obs() const { return id_ == TaskId::kDarcy ? 2 : 1; }
  std::size_t obs_per_point() const { return id_ == TaskId::kSeir ? 2 : 1; }
  std::size_t e_len(std::size_t n_obs) const { return shared_design_len() + design_per_obs() * n_obs; }
  std::size_t d_len(std::size_t n_obs) const { return obs_per_point() * n_obs; }
  // Observation count implied by a design vector length.
  std::size_t n_obs_from_e(std::size_t e_len) const;

  const SeirConstants& seir_constants() const { return seir_; }
  const KlBasis& kl_basis() const;
  const DarcyConstants& darcy_constants() const;
  const NoiseConfig& noise() const { return noise_; }

  bool uniform_prior() const { return id_ != TaskId::kDarcy; }
  void sample_prior(Rng& rng, std::span<double> m) const;
  bool in_support(std::span<const double> m) const;
  // Nearest point of the prior support (clamps uniform coordinates to [0,1]).
  void project_to_support(std::span<double> m) const;
  // Log prior density up to a constant; -inf outside the support.
  double log_prior(std::span<const double> m) const;

  void sample_design(Rng& rng, std::size_t n_obs, std::span<double> e) const;

  SolvedModel solve(std::span<const double> m, std::span<const double> shared_design) const;
  std::vector<double> observe(const SolvedModel& s, std::span<const double> e, std::size_t n_obs) const;
  // Noise-free observations F(m, e).
  std::vector<double> forward(std::span<const double> m, std::span<const double> e, std::size_t n_obs) const;
  // Standard deviation of the observation noise for a solved model.
  double noise_sigma(const SolvedModel& s) const;

  // Flattened full solution used by the error metric: the SEIR trajectory on
  // a 256-point grid, the Darcy pressure field, or d over 101 values of e.
  std::vector<double> full_solution(std::span<const double> m, std::span<const double> shared_design) const;

 private:
  TaskId id_ = TaskId::kNonlinear;
  std::size_t dim_m_ = 1;
  SeirConstants seir_;
  std::shared_ptr<const KlBasis> kl_;
  NoiseConfig noise_;
};

}  // namespace cfm::models
