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

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>
#include <algorithm>
#include <cmath>

#include "cfm/forward_models.hpp"

namespace cfm::models {
namespace {

double harmonic(double a, double b) { return 2.0 * a * b / (a + b); }

}  // namespace

std::string_view linear_solver_name(DarcyLinearSolver s) {
  return s == DarcyLinearSolver::kCholesky ? "cholesky" : "cg";
}

DarcyLinearSolver parse_linear_solver(std::string_view name) {
  if (name == "cg") return DarcyLinearSolver::kConjugateGradient;
  if (name == "cholesky") return DarcyLinearSolver::kCholesky;
  throw std::invalid_argument("unknown linear solver '" + std::string(name) + "' (cg, cholesky)");
}

Field2D solve_darcy_dirichlet(const Field2D& kappa, const std::function<double(double)>& left,
                              const std::function<double(double)>& right, const DarcyConstants& c,
                              SolveStats* stats) {
  const int n = kappa.n;
  if (n < 3) throw std::invalid_argument("darcy: need at least 3 nodes per side");
  for (double k : kappa.values) {
    if (!(k > 0.0) || !std::isfinite(k)) throw std::invalid_argument("darcy: permeability must be positive and finite");
  }
  const double h = kappa.h();
  Field2D u(n);
  for (int j = 0; j < n; ++j) {
    u.at(0, j) = left(j * h);
    u.at(n - 1, j) = right(j * h);
  }

  // Unknowns are the interior columns i = 1..n-2, every j. Rows j = 0 and
  // j = n-1 own half cells, so their x-faces carry half the flux.
  const int cols = n - 2;
  const auto unknowns = static_cast<Eigen::Index>(cols) * n;
  auto index = [n](int i, int j) { return static_cast<Eigen::Index>(i - 1) * n + j; };
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(static_cast<std::size_t>(unknowns) * 5);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(unknowns);

  for (int i = 1; i <= n - 2; ++i) {
    for (int j = 0; j < n; ++j) {
      const double kp = kappa.at(i, j);
      const double x_face = (j == 0 || j == n - 1) ? 0.5 : 1.0;
      double diag = 0.0;
      const auto row = index(i, j);
      for (int di : {-1, 1}) {
        const int ni = i + di;
        const double a = x_face * harmonic(kp, kappa.at(ni, j));
        diag += a;
        if (ni == 0 || ni == n - 1) {
          rhs[row] += a * u.at(ni, j);
        } else {
          triplets.emplace_back(row, index(ni, j), -a);
        }
      }
      for (int dj : {-1, 1}) {
        const int nj = j + dj;
        if (nj < 0 || nj >= n) continue;
        const double a = harmonic(kp, kappa.at(i, nj));
        diag += a;
        triplets.emplace_back(row, index(i, nj), -a);
      }
      triplets.emplace_back(row, row, diag);
    }
  }
  Eigen::SparseMatrix<double> a(unknowns, unknowns);
  a.setFromTriplets(triplets.begin(), triplets.end());

  const double rhs_norm = rhs.norm();
  Eigen::VectorXd sol = Eigen::VectorXd::Zero(unknowns);
  SolveStats local;
  if (rhs_norm > 0.0) {
    if (c.linear_solver == DarcyLinearSolver::kCholesky) {
      Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(a);
      if (ldlt.info() != Eigen::Success) throw SolverError("darcy: LDL^T factorisation failed");
      sol = ldlt.solve(rhs);
    } else {
      Eigen::ConjugateGradient<Eigen::SparseMatrix<double>, Eigen::Lower | Eigen::Upper,
                               Eigen::IncompleteCholesky<double>>
          cg;
      cg.setTolerance(c.cg_tolerance);
      cg.setMaxIterations(c.cg_max_iterations);
      cg.compute(a);
      if (cg.info() != Eigen::Success) throw SolverError("darcy: preconditioner setup failed");
      sol = cg.solve(rhs);
      local.iterations = static_cast<int>(cg.iterations());
    }
    local.relative_residual = (a * sol - rhs).norm() / rhs_norm;
    if (!(local.relative_residual <= c.cg_tolerance)) {
      throw SolverError("darcy: " + std::string(linear_solver_name(c.linear_solver)) + " did not converge after " +
                        std::to_string(local.iterations) + " iterations (relative residual " +
                        std::to_string(local.relative_residual) + ")");
    }
  }
  if (stats) *stats = local;
  for (int i = 1; i <= n - 2; ++i) {
    for (int j = 0; j < n; ++j) u.at(i, j) = sol[index(i, j)];
  }
  return u;
}

double boundary_bump(double y, double center, double width) {
  return std::exp(-(y - center) * (y - center) / (2.0 * width));
}

Field2D darcy_solve(const Field2D& kappa, double e1, double e2, const DarcyConstants& c, SolveStats* stats) {
  const double w = c.boundary_width;
  return solve_darcy_dirichlet(
      kappa, [e1, w](double y) { return boundary_bump(y, e1, w); },
      [e2, w](double y) { return -boundary_bump(y, e2, w); }, c, stats);
}

double bilinear(const Field2D& u, double x, double y) {
  if (!(x >= 0.0 && x <= 1.0 && y >= 0.0 && y <= 1.0)) {
    throw std::out_of_range("darcy: point (" + std::to_string(x) + ", " + std::to_string(y) +
                            ") outside the unit square");
  }
  const double h = u.h();
  const int i = std::min(static_cast<int>(x / h), u.n - 2);
  const int j = std::min(static_cast<int>(y / h), u.n - 2);
  const double fx = x / h - i;
  const double fy = y / h - j;
  return (1 - fx) * (1 - fy) * u.at(i, j) + fx * (1 - fy) * u.at(i + 1, j) +
         (1 - fx) * fy * u.at(i, j + 1) + fx * fy * u.at(i + 1, j + 1);
}

std::vector<double> darcy_observe(const Field2D& u, std::span<const double> points,
                                  std::span<const double> eta) {
  if (points.size() % 2 != 0) throw std::invalid_argument("darcy_observe: odd coordinate count");
  const std::size_t n = points.size() / 2;
  if (!eta.empty() && eta.size() != n) throw std::invalid_argument("darcy_observe: noise length mismatch");
  std::vector<double> d(n);
  for (std::size_t k = 0; k < n; ++k) {
    d[k] = bilinear(u, points[2 * k], points[2 * k + 1]) + (eta.empty() ? 0.0 : eta[k]);
  }
  return d;
}

}  // namespace cfm::models
