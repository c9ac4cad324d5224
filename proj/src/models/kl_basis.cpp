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

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "cfm/binary_io.hpp"
#include "cfm/forward_models.hpp"

namespace cfm::models {

double squared_exponential(double x1, double y1, double x2, double y2, double sigma_v, double ell2) {
  const double dx = x1 - x2;
  const double dy = y1 - y2;
  return sigma_v * sigma_v * std::exp(-(dx * dx + dy * dy) / (2.0 * ell2));
}

double KlBasis::captured_fraction() const {
  return std::accumulate(eigenvalues.begin(), eigenvalues.end(), 0.0) / total_variance;
}

namespace {

// Top `modes` eigenpairs of the symmetric PSD matrix `a` by block subspace
// iteration with Rayleigh-Ritz. Returns when every wanted pair satisfies
// ||A v - lambda v|| <= tol * lambda_max.
void top_eigenpairs(const Eigen::MatrixXd& a, int modes, Eigen::VectorXd& values, Eigen::MatrixXd& vectors) {
  const auto n = a.rows();
  if (n <= 4 * modes) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
    if (es.info() != Eigen::Success) throw SolverError("kl_basis_build: dense eigensolver failed");
    values = es.eigenvalues().tail(modes).reverse();
    vectors = es.eigenvectors().rightCols(modes).rowwise().reverse();
    return;
  }
  constexpr double kTol = 1e-12;
  constexpr int kMaxIterations = 500;
  const Eigen::Index block = std::min<Eigen::Index>(n, 3 * modes);
  Rng rng(derive_seed(0x4b4c, {static_cast<std::uint64_t>(n), static_cast<std::uint64_t>(modes)}));
  Eigen::MatrixXd q(n, block);
  for (Eigen::Index j = 0; j < block; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) q(i, j) = rng.normal();
  }
  q = Eigen::HouseholderQR<Eigen::MatrixXd>(q).householderQ() * Eigen::MatrixXd::Identity(n, block);
  for (int it = 0; it < kMaxIterations; ++it) {
    const Eigen::MatrixXd y = a * q;
    const Eigen::MatrixXd t = q.transpose() * y;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (t + t.transpose()));
    const Eigen::VectorXd ritz = es.eigenvalues().tail(modes).reverse();
    const Eigen::MatrixXd w = es.eigenvectors().rightCols(modes).rowwise().reverse();
    const Eigen::MatrixXd v = q * w;
    const Eigen::MatrixXd residual = y * w - v * ritz.asDiagonal();
    const double scale = std::max(ritz[0], 1e-300);
    if (residual.colwise().norm().maxCoeff() <= kTol * scale) {
      values = ritz;
      vectors = v;
      return;
    }
    q = Eigen::HouseholderQR<Eigen::MatrixXd>(y).householderQ() * Eigen::MatrixXd::Identity(n, block);
  }
  throw SolverError("kl_basis_build: subspace iteration did not converge");
}

}  // namespace

KlBasis kl_basis_build(const DarcyConstants& c) {
  const int n = c.nodes_per_side;
  const auto nn = static_cast<Eigen::Index>(c.node_count());
  const double h = c.h();
  const double h2 = h * h;
  if (c.n_modes < 1 || c.n_modes > nn) throw std::invalid_argument("kl_basis_build: bad mode count");

  Eigen::MatrixXd a(nn, nn);
  for (Eigen::Index p = 0; p < nn; ++p) {
    const double xp = static_cast<double>(p / n) * h, yp = static_cast<double>(p % n) * h;
    for (Eigen::Index q = p; q < nn; ++q) {
      const double xq = static_cast<double>(q / n) * h, yq = static_cast<double>(q % n) * h;
      a(p, q) = a(q, p) = h2 * squared_exponential(xp, yp, xq, yq, c.sigma_v, c.length_scale_sq);
    }
  }
  Eigen::VectorXd values;
  Eigen::MatrixXd vectors;
  top_eigenpairs(a, c.n_modes, values, vectors);

  KlBasis basis;
  basis.constants = c;
  basis.total_variance = static_cast<double>(nn) * c.sigma_v * c.sigma_v * h2;
  basis.eigenvalues.resize(c.n_modes);
  basis.eigenfunctions.resize(static_cast<std::size_t>(nn) * c.n_modes);
  // Fixed sign (largest-magnitude entry positive) so the basis is reproducible.
  for (int k = 0; k < c.n_modes; ++k) {
    const auto col = vectors.col(k);
    Eigen::Index big = 0;
    col.cwiseAbs().maxCoeff(&big);
    const double sign = col[big] < 0 ? -1.0 : 1.0;
    basis.eigenvalues[k] = values[k];
    double* dst = basis.eigenfunctions.data() + static_cast<std::size_t>(k) * nn;
    for (Eigen::Index p = 0; p < nn; ++p) dst[p] = sign * col[p] / h;
  }
  return basis;
}

namespace {
constexpr std::string_view kKlMagic = "CFMK";
}

void save_kl_basis(const KlBasis& basis, const std::filesystem::path& path) {
  io::Writer w;
  w.bytes(kKlMagic.data(), kKlMagic.size());
  w.u32(kKlCacheVersion);
  const auto& c = basis.constants;
  w.u32(static_cast<std::uint32_t>(c.nodes_per_side));
  w.f64(c.sigma_v);
  w.f64(c.length_scale_sq);
  w.u32(static_cast<std::uint32_t>(basis.modes()));
  w.f64(basis.total_variance);
  w.f64s(basis.eigenvalues);
  w.f64s(basis.eigenfunctions);
  w.save(path);
}

KlBasis load_kl_basis(const std::filesystem::path& path) {
  auto r = io::Reader::open(path);
  r.expect_magic(kKlMagic);
  const auto version = r.u32();
  if (version != kKlCacheVersion) {
    throw io::FormatError(io::FormatErrorKind::kVersionMismatch,
                          path.string() + ": KL cache version " + std::to_string(version) + ", expected " +
                              std::to_string(kKlCacheVersion));
  }
  KlBasis b;
  b.constants.nodes_per_side = static_cast<int>(r.u32());
  b.constants.sigma_v = r.f64();
  b.constants.length_scale_sq = r.f64();
  b.constants.n_modes = static_cast<int>(r.u32());
  b.total_variance = r.f64();
  b.eigenvalues.resize(b.constants.n_modes);
  r.f64s(b.eigenvalues);
  b.eigenfunctions.resize(b.constants.node_count() * b.constants.n_modes);
  r.f64s(b.eigenfunctions);
  if (!r.at_end()) throw io::FormatError(io::FormatErrorKind::kCorrupt, path.string() + ": trailing bytes");
  return b;
}

std::string kl_cache_name(const DarcyConstants& c) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "kl_n%d_l%.6g_s%.6g_m%d_v%u.bin", c.nodes_per_side, c.length_scale_sq, c.sigma_v,
                c.n_modes, kKlCacheVersion);
  return buf;
}

KlBasis load_or_build_kl_basis(const DarcyConstants& c, const std::filesystem::path& dir) {
  const auto path = dir / kl_cache_name(c);
  if (std::filesystem::exists(path)) {
    auto b = load_kl_basis(path);
    if (b.constants.nodes_per_side != c.nodes_per_side || b.constants.n_modes != c.n_modes) {
      throw io::FormatError(io::FormatErrorKind::kCorrupt, path.string() + ": KL cache does not match its name");
    }
    // Solver settings are not part of the cache key.
    b.constants = c;
    return b;
  }
  auto b = kl_basis_build(c);
  save_kl_basis(b, path);
  return b;
}

double kl_frobenius_error(const KlBasis& basis) {
  const auto& c = basis.constants;
  const int n = c.nodes_per_side;
  const auto nn = c.node_count();
  const double h = c.h();
  const int m = basis.modes();
  double err2 = 0.0, ref2 = 0.0;
  std::vector<double> col(m);
  for (std::size_t p = 0; p < nn; ++p) {
    const double xp = static_cast<double>(p / n) * h, yp = static_cast<double>(p % n) * h;
    for (int k = 0; k < m; ++k) col[k] = basis.eigenvalues[k] * basis.mode(k)[p];
    for (std::size_t q = 0; q < nn; ++q) {
      const double xq = static_cast<double>(q / n) * h, yq = static_cast<double>(q % n) * h;
      const double kv = squared_exponential(xp, yp, xq, yq, c.sigma_v, c.length_scale_sq);
      double approx = 0.0;
      for (int k = 0; k < m; ++k) approx += col[k] * basis.eigenfunctions[static_cast<std::size_t>(k) * nn + q];
      err2 += (kv - approx) * (kv - approx);
      ref2 += kv * kv;
    }
  }
  return std::sqrt(err2 / ref2);
}

Field2D kl_expand(const KlBasis& basis, std::span<const double> m) {
  if (m.size() != static_cast<std::size_t>(basis.modes())) {
    throw std::invalid_argument("kl_expand: expected " + std::to_string(basis.modes()) + " coefficients, got " +
                                std::to_string(m.size()));
  }
  Field2D f(basis.constants.nodes_per_side);
  for (int k = 0; k < basis.modes(); ++k) {
    const double s = m[k] * std::sqrt(basis.eigenvalues[k]);
    const auto phi = basis.mode(k);
    for (std::size_t p = 0; p < phi.size(); ++p) f.values[p] += s * phi[p];
  }
  return f;
}

}  // namespace cfm::models
