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

#include "cfm/mcmc_baseline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <stdexcept>

namespace cfm::mcmc {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

}  // namespace

void ChainConfig::validate() const {
  if (n_samples < 1) throw std::invalid_argument("chain: n_samples must be >= 1");
  if (!(burn_in >= 0.0 && burn_in < 1.0)) throw std::invalid_argument("chain: burn-in must be in [0, 1)");
  for (double s : proposal_scale) {
    if (!(s >= 0.0) || !std::isfinite(s)) throw std::invalid_argument("chain: proposal scales must be >= 0");
  }
  if (sigma_obs && !(*sigma_obs > 0.0)) throw std::invalid_argument("chain: sigma_obs must be > 0");
  if (tune && (tune_steps < 1 || tune_rounds < 1)) throw std::invalid_argument("chain: empty tuning schedule");
}

LogPosterior::LogPosterior(const models::TaskSpec& task, std::vector<double> d, std::vector<double> e,
                           double sigma_obs)
    : task_(&task), d_(std::move(d)), e_(std::move(e)), n_obs_(task.n_obs_from_e(e_.size())), sigma_(sigma_obs) {
  if (d_.size() != task.d_len(n_obs_)) {
    throw std::invalid_argument("log_posterior: " + std::to_string(d_.size()) + " observations do not match a design for " +
                                std::to_string(n_obs_) + " points");
  }
  if (!(sigma_ > 0.0)) throw std::invalid_argument("log_posterior: sigma_obs must be > 0");
}

double LogPosterior::operator()(std::span<const double> m) const {
  const double prior = task_->log_prior(m);
  if (prior == kNegInf) return kNegInf;
  std::vector<double> f;
  try {
    f = task_->forward(m, e_, n_obs_);
  } catch (const std::exception& ex) {
    if (failures_++ == 0) std::clog << "warning: forward model failed inside the chain: " << ex.what() << '\n';
    last_failure_ = ex.what();
    return kNegInf;
  }
  double r2 = 0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    const double r = d_[i] - f[i];
    r2 += r * r;
  }
  return prior - r2 / (2.0 * sigma_ * sigma_);
}

double log_posterior(const models::TaskSpec& task, std::span<const double> m, std::span<const double> d,
                     std::span<const double> e, double sigma_obs) {
  return LogPosterior(task, {d.begin(), d.end()}, {e.begin(), e.end()}, sigma_obs)(m);
}

double default_sigma_obs(const models::TaskSpec& task, std::span<const double> d) {
  switch (task.id()) {
    case models::TaskId::kNonlinear:
      return task.noise().nonlinear;
    case models::TaskId::kSeir:
      return task.noise().seir;
    case models::TaskId::kDarcy: {
      double peak = 0;
      for (double v : d) peak = std::max(peak, std::abs(v));
      return task.noise().darcy_relative * std::max(peak, 1e-12);
    }
  }
  return 1.0;
}

bool mh_step(ChainState& state, const LogTarget& target, std::span<const double> scale, Rng& rng) {
  std::vector<double> proposal(state.m.size());
  for (std::size_t k = 0; k < proposal.size(); ++k) proposal[k] = state.m[k] + scale[k] * rng.normal();
  const double u = rng.uniform();
  const double lp = target(proposal);
  if (lp == kNegInf) return false;
  // u in [0, 1), so a non-negative difference always accepts.
  if (std::log(u) < lp - state.log_post) {
    state.m = std::move(proposal);
    state.log_post = lp;
    return true;
  }
  return false;
}

ChainResult run_chain(const LogTarget& target, std::size_t dim,
                      const std::function<void(Rng&, std::span<double>)>& init, const ChainConfig& cfg) {
  cfg.validate();
  if (!cfg.proposal_scale.empty() && cfg.proposal_scale.size() != dim) {
    throw std::invalid_argument("chain: proposal scale has " + std::to_string(cfg.proposal_scale.size()) +
                                " entries for " + std::to_string(dim) + " coordinates");
  }
  const auto start = std::chrono::steady_clock::now();
  Rng rng(derive_seed(cfg.seed, Stream::kChain, {0}));
  ChainResult result;
  result.dim = dim;
  result.proposal_scale = cfg.proposal_scale.empty() ? std::vector<double>(dim, 0.1) : cfg.proposal_scale;

  ChainState state;
  state.m.resize(dim);
  state.log_post = kNegInf;
  for (int attempt = 0; attempt < 100 && state.log_post == kNegInf; ++attempt) {
    init(rng, state.m);
    state.log_post = target(state.m);
  }
  if (state.log_post == kNegInf) throw std::runtime_error("chain: no start point with finite posterior density");

  const bool all_zero = std::all_of(result.proposal_scale.begin(), result.proposal_scale.end(),
                                    [](double s) { return s == 0.0; });
  if (cfg.tune && !all_zero) {
    bool settled = false;
    for (int round = 0; round < cfg.tune_rounds; ++round) {
      std::size_t accepted = 0;
      for (std::size_t i = 0; i < cfg.tune_steps; ++i) accepted += mh_step(state, target, result.proposal_scale, rng);
      const double rate = static_cast<double>(accepted) / static_cast<double>(cfg.tune_steps);
      if (rate >= 0.2 && rate <= 0.4) {
        settled = true;
        break;
      }
      const double factor = std::exp(2.0 * (rate - 0.3));
      for (double& s : result.proposal_scale) s *= factor;
    }
    if (!settled) result.warnings.push_back("proposal tuning did not reach acceptance in [0.2, 0.4]");
  }

  const auto burn = static_cast<std::size_t>(std::floor(cfg.burn_in * static_cast<double>(cfg.n_samples)));
  result.samples.reserve((cfg.n_samples - burn) * dim);
  result.mean.assign(dim, 0.0);
  if (cfg.record_trace) result.trace.reserve(cfg.n_samples);
  std::size_t accepted = 0, rejected_run = 0;
  bool stalled = false;
  for (std::size_t i = 0; i < cfg.n_samples; ++i) {
    const bool ok = mh_step(state, target, result.proposal_scale, rng);
    accepted += ok;
    rejected_run = ok ? 0 : rejected_run + 1;
    if (rejected_run >= cfg.stall_limit && !stalled) {
      stalled = true;
      result.warnings.push_back("all proposals rejected for " + std::to_string(cfg.stall_limit) +
                                " consecutive steps (first at step " + std::to_string(i + 1) + ")");
    }
    if (i >= burn) {
      result.samples.insert(result.samples.end(), state.m.begin(), state.m.end());
      for (std::size_t k = 0; k < dim; ++k) result.mean[k] += state.m[k];
    }
    if (cfg.record_trace) result.trace.push_back({state.m, state.log_post, ok});
  }
  const auto kept = static_cast<double>(cfg.n_samples - burn);
  for (double& v : result.mean) v /= kept;
  result.acceptance = static_cast<double>(accepted) / static_cast<double>(cfg.n_samples);
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

ChainResult run_chain(const models::TaskSpec& task, std::span<const double> d, std::span<const double> e,
                      const ChainConfig& cfg) {
  const double sigma = cfg.sigma_obs ? *cfg.sigma_obs : default_sigma_obs(task, d);
  const LogPosterior posterior(task, {d.begin(), d.end()}, {e.begin(), e.end()}, sigma);
  auto result = run_chain([&](std::span<const double> m) { return posterior(m); }, task.dim_m(),
                          [&](Rng& rng, std::span<double> m) { task.sample_prior(rng, m); }, cfg);
  if (posterior.failures() > 0) {
    result.warnings.push_back(std::to_string(posterior.failures()) + " forward solves failed; last: " +
                              posterior.last_failure());
  }
  return result;
}

void write_chain_csv(const ChainResult& result, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.precision(17);
  out << "step";
  for (std::size_t k = 0; k < result.dim; ++k) out << ",m_" << k;
  out << ",log_posterior,accepted\n";
  for (std::size_t i = 0; i < result.trace.size(); ++i) {
    const auto& row = result.trace[i];
    out << i + 1;
    for (double v : row.m) out << ',' << v;
    out << ',' << row.log_post << ',' << (row.accepted ? 1 : 0) << '\n';
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace cfm::mcmc
