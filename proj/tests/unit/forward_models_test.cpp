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

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "cfm/forward_models.hpp"
#include "doctest.h"

using namespace cfm;
using namespace cfm::models;

namespace {

const std::vector<double> kReference{0.4, 0.3, 0.3, 0.1, 0.15, 0.6};

std::vector<std::vector<double>> read_csv(const std::string& path) {
  std::ifstream in(path);
  REQUIRE_MESSAGE(in.good(), "missing fixture " << path);
  std::string line;
  std::getline(in, line);
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    rows.push_back(row);
  }
  return rows;
}

Field2D constant_field(int n, double v) { return Field2D(n, v); }

DarcyConstants small_grid(int nodes) {
  DarcyConstants c;
  c.nodes_per_side = nodes;
  return c;
}

}  // namespace

TEST_CASE("nonlinear forward examples") {
  CHECK(nonlinear_forward(0.0, 0.7, 0.25) == doctest::Approx(0.25));
  CHECK(nonlinear_forward(1.0, 0.2, 0.0) == doctest::Approx(1.04).epsilon(1e-14));
  CHECK(nonlinear_forward(1.0, 0.0, 0.0) == doctest::Approx(0.8187307530779818).epsilon(1e-14));
}

TEST_CASE("seir rates") {
  const std::vector<double> m{0.2, 0.3, 0.25, 0.1, 0.7, 0.4};
  SUBCASE("printed transition") {
    SeirConstants c;
    c.transition = RateTransition::kPrinted;
    auto r = seir_rates(c.tau, m, c);
    CHECK(r.beta == doctest::Approx(0.2));
    CHECK(r.gamma_d == doctest::Approx(0.1));
    r = seir_rates(1e3, m, c);
    CHECK(r.beta == doctest::Approx(0.2 + 0.5 * 0.5));
    CHECK(r.gamma_d == doctest::Approx(0.1 + 0.5 * 0.3));
  }
  SUBCASE("smooth transition") {
    SeirConstants c;
    auto r = seir_rates(-1e3, m, c);
    CHECK(r.beta == doctest::Approx(0.2));
    r = seir_rates(1e3, m, c);
    CHECK(r.beta == doctest::Approx(0.7));
    CHECK(r.gamma_d == doctest::Approx(0.4));
    r = seir_rates(c.tau, m, c);
    CHECK(r.beta == doctest::Approx(0.45));
  }
  SeirConstants c;
  for (double t = 0.0; t <= 4.0; t += 0.125) {
    const auto r = seir_rates(t, m, c);
    CHECK(r.gamma - r.gamma_d == doctest::Approx(0.25));
  }
  CHECK(parse_transition("printed") == RateTransition::kPrinted);
  CHECK_THROWS_AS(parse_transition("linear"), std::invalid_argument);
}

TEST_CASE("seir initial derivatives") {
  const std::vector<double> m{0.2, 0.3, 0.25, 0.1, 0.7, 0.4};
  SeirConstants c;
  const auto d = seir_rhs(0.0, c.initial, m, c);
  CHECK(d[0] == 0.0);
  CHECK(d[3] == 0.0);
  CHECK(d[1] == doctest::Approx(-0.3));
  CHECK(d[2] == doctest::Approx(0.3));
}

TEST_CASE("seir matches the high-order reference trajectory") {
  const auto rows = read_csv(std::string(CFM_FIXTURE_DIR) + "/seir_reference.csv");
  REQUIRE(rows.size() == 17);
  const auto traj = seir_solve(kReference, SeirConstants{});
  for (const auto& row : rows) {
    const auto s = traj.at(row[0]);
    for (int k = 0; k < 4; ++k) CHECK(s[k] == doctest::Approx(row[k + 1]).epsilon(1e-7).scale(100));
  }
}

TEST_CASE("seir conservation and bounds over prior draws") {
  SeirConstants c;
  Rng rng(derive_seed(7, Stream::kEval, {1}));
  std::vector<double> m(kSeirParams);
  double worst_drift = 0.0;
  double lo = 1e9, hi = -1e9;
  for (int draw = 0; draw < 1000; ++draw) {
    for (auto& v : m) v = rng.uniform();
    const auto traj = seir_solve(m, c);
    for (const auto& s : traj.steps()) {
      worst_drift = std::max(worst_drift, std::abs(s[0] + s[1] + s[2] + s[3] - 100.0) / 100.0);
      for (double v : s) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    }
  }
  CHECK(worst_drift < 1e-8);
  CHECK(lo >= -1e-9);
  CHECK(hi <= 100.0 + 1e-9);
}

TEST_CASE("seir solve errors") {
  CHECK_THROWS_AS(seir_solve(std::vector<double>{0.1, 0.2}, SeirConstants{}), std::invalid_argument);
  std::vector<double> wild{1e6, 1.0, 0.0, 0.0, 1e6, 0.0};
  try {
    seir_solve(wild, SeirConstants{});
    FAIL("expected SolverError");
  } catch (const SolverError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("t=") != std::string::npos);
    CHECK(msg.find("m=[") != std::string::npos);
  }
}

TEST_CASE("seir observe") {
  SeirConstants c;
  const auto traj = seir_solve(kReference, c);
  const std::vector<double> sorted{1.0, 1.5, 2.2, 3.0};
  const std::vector<double> shuffled{2.2, 1.0, 3.0, 1.5};
  const auto a = seir_observe(traj, sorted, {}, c);
  const auto b = seir_observe(traj, shuffled, {}, c);
  std::vector<std::pair<double, double>> ra, rb;
  for (std::size_t i = 0; i < 4; ++i) {
    ra.emplace_back(a[2 * i], a[2 * i + 1]);
    rb.emplace_back(b[2 * i], b[2 * i + 1]);
  }
  std::sort(ra.begin(), ra.end());
  std::sort(rb.begin(), rb.end());
  CHECK(ra == rb);

  const std::vector<double> dup{1.7, 1.7};
  const auto d = seir_observe(traj, dup, {}, c);
  CHECK(d[0] == d[2]);
  CHECK(d[1] == d[3]);

  const std::vector<double> noise{0.5, -0.5};
  const auto n = seir_observe(traj, std::vector<double>{1.7}, noise, c);
  CHECK(n[0] == doctest::Approx(d[0] + 0.5));
  CHECK(n[1] == doctest::Approx(d[1] - 0.5));

  CHECK_THROWS_AS(seir_observe(traj, std::vector<double>{0.5}, {}, c), std::out_of_range);
  CHECK_THROWS_AS(seir_observe(traj, std::vector<double>{3.5}, {}, c), std::out_of_range);

  Rng rng(11);
  std::vector<double> m(kSeirParams), t(4);
  for (int draw = 0; draw < 200; ++draw) {
    for (auto& v : m) v = rng.uniform();
    for (auto& v : t) v = rng.uniform(1.0, 3.0);
    for (double v : seir_observe(seir_solve(m, c), t, {}, c)) CHECK(v >= 0.0);
  }
}

TEST_CASE("darcy antisymmetry for symmetric boundary data") {
  const auto c = small_grid(65);
  SolveStats stats;
  const auto u = darcy_solve(constant_field(65, 1.0), 0.5, 0.5, c, &stats);
  CHECK(stats.relative_residual <= 1e-10);
  double worst = 0.0;
  for (int i = 0; i < 65; ++i) {
    for (int j = 0; j < 65; ++j) worst = std::max(worst, std::abs(u.at(i, j) + u.at(64 - i, j)));
  }
  CHECK(worst < 1e-8);
}

TEST_CASE("darcy discrete maximum principle") {
  const auto c = small_grid(33);
  for (auto [e1, e2] : {std::pair{0.2, 0.8}, std::pair{0.5, 0.5}, std::pair{0.9, 0.1}}) {
    const auto u = darcy_solve(constant_field(33, 1.0), e1, e2, c);
    double bmin = 1e9, bmax = -1e9, imin = 1e9, imax = -1e9;
    for (int j = 0; j < 33; ++j) {
      for (int i : {0, 32}) {
        bmin = std::min(bmin, u.at(i, j));
        bmax = std::max(bmax, u.at(i, j));
      }
      for (int i = 1; i < 32; ++i) {
        imin = std::min(imin, u.at(i, j));
        imax = std::max(imax, u.at(i, j));
      }
    }
    CHECK(imin >= bmin - 1e-12);
    CHECK(imax <= bmax + 1e-12);
  }
}

TEST_CASE("darcy reproduces linear fields") {
  const auto c = small_grid(17);
  const auto u = solve_darcy_dirichlet(
      constant_field(17, 1.0), [](double) { return 0.0; }, [](double) { return 1.0; }, c);
  for (int i = 0; i < 17; ++i) {
    for (int j = 0; j < 17; ++j) CHECK(u.at(i, j) == doctest::Approx(i / 16.0).epsilon(1e-9));
  }
}

TEST_CASE("darcy second-order grid convergence") {
  auto kappa_fn = [](double x, double y) { return std::exp(0.5 * std::sin(3.0 * x) * std::cos(2.0 * y)); };
  auto solve_on = [&](int n) {
    Field2D k(n);
    const double h = 1.0 / (n - 1);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) k.at(i, j) = kappa_fn(i * h, j * h);
    }
    return darcy_solve(k, 0.3, 0.7, small_grid(n));
  };
  const auto ref = solve_on(129);
  const auto coarse = solve_on(33);
  const auto mid = solve_on(65);
  double e_coarse = 0.0, e_mid = 0.0;
  for (int i = 0; i < 33; ++i) {
    for (int j = 0; j < 33; ++j) {
      const double r = ref.at(4 * i, 4 * j);
      e_coarse = std::max(e_coarse, std::abs(coarse.at(i, j) - r));
      e_mid = std::max(e_mid, std::abs(mid.at(2 * i, 2 * j) - r));
    }
  }
  MESSAGE("convergence factor " << e_coarse / e_mid);
  CHECK(e_coarse / e_mid >= 3.5);
}

TEST_CASE("darcy direct and iterative solvers agree") {
  auto c = small_grid(65);
  Field2D k(65);
  for (int i = 0; i < 65; ++i) {
    for (int j = 0; j < 65; ++j) k.at(i, j) = std::exp(std::sin(0.1 * i) * std::cos(0.07 * j));
  }
  const auto u_cg = darcy_solve(k, 0.2, 0.9, c);
  c.linear_solver = DarcyLinearSolver::kCholesky;
  SolveStats stats;
  const auto u_ch = darcy_solve(k, 0.2, 0.9, c, &stats);
  CHECK(stats.relative_residual <= 1e-10);
  double worst = 0.0;
  for (std::size_t p = 0; p < u_cg.values.size(); ++p) worst = std::max(worst, std::abs(u_cg.values[p] - u_ch.values[p]));
  CHECK(worst < 1e-7);
  CHECK(parse_linear_solver("cholesky") == DarcyLinearSolver::kCholesky);
  CHECK_THROWS_AS(parse_linear_solver("lu"), std::invalid_argument);
}

TEST_CASE("darcy errors") {
  auto k = constant_field(9, 1.0);
  k.at(3, 3) = 0.0;
  CHECK_THROWS_AS(darcy_solve(k, 0.5, 0.5, small_grid(9)), std::invalid_argument);
  auto tight = small_grid(33);
  tight.cg_max_iterations = 1;
  CHECK_THROWS_AS(darcy_solve(constant_field(33, 1.0), 0.2, 0.7, tight), SolverError);
}

TEST_CASE("bilinear interpolation") {
  Field2D u(9);
  for (int i = 0; i < 9; ++i) {
    for (int j = 0; j < 9; ++j) u.at(i, j) = std::sin(i * 1.3 + j * 0.7);
  }
  CHECK(bilinear(u, 3.0 / 8, 5.0 / 8) == doctest::Approx(u.at(3, 5)));
  CHECK(bilinear(u, 1.0, 1.0) == doctest::Approx(u.at(8, 8)));
  const double center = bilinear(u, 3.5 / 8, 5.5 / 8);
  CHECK(center == doctest::Approx(0.25 * (u.at(3, 5) + u.at(4, 5) + u.at(3, 6) + u.at(4, 6))));

  Field2D lin(9);
  for (int i = 0; i < 9; ++i) {
    for (int j = 0; j < 9; ++j) lin.at(i, j) = i / 8.0;
  }
  Rng rng(3);
  for (int k = 0; k < 50; ++k) {
    const double x = rng.uniform(), y = rng.uniform();
    CHECK(bilinear(lin, x, y) == doctest::Approx(x).epsilon(1e-12));
  }
  CHECK_THROWS_AS(bilinear(u, -0.1, 0.5), std::out_of_range);
  CHECK_THROWS_AS(darcy_observe(u, std::vector<double>{0.5, 1.5}, {}), std::out_of_range);
  const auto d = darcy_observe(lin, std::vector<double>{0.25, 0.1, 0.75, 0.9}, std::vector<double>{0.1, -0.1});
  CHECK(d[0] == doctest::Approx(0.35));
  CHECK(d[1] == doctest::Approx(0.65));
}

TEST_CASE("kl basis matches the separable one-dimensional oracle") {
  // The squared-exponential kernel factorises over x and y, so the 2-D
  // eigenvalues are pairwise products of the 1-D ones.
  const auto c = small_grid(17);
  const auto basis = kl_basis_build(c);
  const int n = 17;
  const double h = c.h();
  Eigen::MatrixXd k1(n, n);
  for (int a = 0; a < n; ++a) {
    for (int b = 0; b < n; ++b) k1(a, b) = h * std::exp(-std::pow((a - b) * h, 2) / (2.0 * c.length_scale_sq));
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(k1);
  std::vector<double> products;
  for (int a = 0; a < n; ++a) {
    for (int b = 0; b < n; ++b) products.push_back(es.eigenvalues()[a] * es.eigenvalues()[b]);
  }
  std::sort(products.rbegin(), products.rend());
  REQUIRE(basis.modes() == 16);
  for (int k = 0; k < 16; ++k) {
    CHECK(basis.eigenvalues[k] == doctest::Approx(products[k]).epsilon(1e-9));
    if (k > 0) CHECK(basis.eigenvalues[k] <= basis.eigenvalues[k - 1]);
    CHECK(basis.eigenvalues[k] >= 0.0);
    double norm = 0.0;
    for (double v : basis.mode(k)) norm += v * v * h * h;
    CHECK(norm == doctest::Approx(1.0).epsilon(1e-10));
  }
  CHECK(basis.total_variance == doctest::Approx(n * n * h * h));
  CHECK(squared_exponential(0.3, 0.4, 0.3, 0.4, 1.0, 0.1) == 1.0);
}

TEST_CASE("kl expansion") {
  const auto c = small_grid(17);
  const auto basis = kl_basis_build(c);
  std::vector<double> zero(16, 0.0);
  for (double v : kl_expand(basis, zero).values) CHECK(v == 0.0);

  Rng rng(5);
  std::vector<double> a(16), b(16), ab(16);
  for (int k = 0; k < 16; ++k) {
    a[k] = rng.normal();
    b[k] = rng.normal();
    ab[k] = a[k] + b[k];
  }
  const auto fa = kl_expand(basis, a), fb = kl_expand(basis, b), fab = kl_expand(basis, ab);
  for (std::size_t p = 0; p < fa.values.size(); ++p) {
    CHECK(fab.values[p] == doctest::Approx(fa.values[p] + fb.values[p]).epsilon(1e-12));
  }

  // Pointwise variance at the centre against its closed form.
  const std::size_t centre = 8 * 17 + 8;
  double expected = 0.0;
  for (int k = 0; k < 16; ++k) expected += basis.eigenvalues[k] * std::pow(basis.mode(k)[centre], 2);
  double sum = 0.0, sum2 = 0.0;
  const int draws = 10000;
  std::vector<double> m(16);
  for (int s = 0; s < draws; ++s) {
    for (auto& v : m) v = rng.normal();
    const double v = kl_expand(basis, m).values[centre];
    sum += v;
    sum2 += v * v;
  }
  const double var = sum2 / draws - std::pow(sum / draws, 2);
  CHECK(var == doctest::Approx(expected).epsilon(0.05));
  CHECK(expected <= 1.0 + 1e-9);
  CHECK_THROWS_AS(kl_expand(basis, std::vector<double>(3)), std::invalid_argument);
}

TEST_CASE("kl cache round trip") {
  const auto c = small_grid(9);
  const auto dir = std::filesystem::temp_directory_path() / "cfm_kl_test";
  std::filesystem::remove_all(dir);
  const auto built = load_or_build_kl_basis(c, dir);
  CHECK(std::filesystem::exists(dir / kl_cache_name(c)));
  const auto loaded = load_or_build_kl_basis(c, dir);
  CHECK(loaded.eigenvalues == built.eigenvalues);
  CHECK(loaded.eigenfunctions == built.eigenfunctions);
  std::filesystem::remove_all(dir);
}

TEST_CASE("task layouts and priors") {
  const auto nl = TaskSpec::nonlinear();
  const auto se = TaskSpec::seir();
  auto basis = std::make_shared<KlBasis>(kl_basis_build(small_grid(17)));
  const auto da = TaskSpec::darcy(basis);
  CHECK(nl.e_len(5) == 5);
  CHECK(se.d_len(4) == 8);
  CHECK(da.e_len(3) == 8);
  CHECK(da.n_obs_from_e(8) == 3);
  CHECK_THROWS_AS(da.n_obs_from_e(7), std::invalid_argument);

  Rng rng(9);
  std::vector<double> m(6), e(4);
  se.sample_prior(rng, m);
  CHECK(se.in_support(m));
  se.sample_design(rng, 4, e);
  for (double t : e) CHECK((t >= 1.0 && t <= 3.0));
  m[2] = 1.5;
  CHECK(std::isinf(se.log_prior(m)));
  m[0] = -0.25;
  se.project_to_support(m);
  CHECK(m[0] == 0.0);
  CHECK(m[2] == 1.0);
  CHECK(se.in_support(m));

  std::vector<double> md(16, 0.0), ed(da.e_len(4));
  da.sample_design(rng, 4, ed);
  const double h = basis->constants.h();
  for (std::size_t k = 2; k < ed.size(); ++k) CHECK((ed[k] >= h && ed[k] <= 1.0 - h));
  CHECK(da.log_prior(md) == 0.0);
  const auto solved = da.solve(md, std::span<const double>(ed).first(2));
  CHECK(da.noise_sigma(solved) == doctest::Approx(0.01 * std::get<DarcySolved>(solved).max_abs));
  CHECK(da.forward(md, ed, 4).size() == 4);

  std::vector<double> m1{1.0};
  const auto d = nl.forward(m1, std::vector<double>{0.2, 0.0}, 2);
  CHECK(d[0] == doctest::Approx(1.04));
  CHECK(nl.full_solution(m1, {}).size() == 101);
  CHECK(se.full_solution(kReference, {}).size() == 1024);
}
