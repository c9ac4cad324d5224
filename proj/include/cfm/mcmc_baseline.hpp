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

// Random-walk Metropolis-Hastings over the task parameters, used as the
// reference sampler the flow model is compared against.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cfm/forward_models.hpp"
#include "cfm/rng.hpp"

namespace cfm::mcmc {

struct ChainConfig {
  std::size_t n_samples = 10000;
  // Per-coordinate random-walk standard deviation; empty means 0.1 for every
  // coordinate (in prior units: the uniform width or the normal's sigma).
  std::vector<double> proposal_scale;
  double burn_in = 0.5;  // fraction of n_samples discarded
  // Likelihood noise; unset means the data-generation noise of the task.
  std::optional<double> sigma_obs;
  // Pre-run tuning: rounds of tune_steps steps rescale the proposal until
  // the round acceptance lies in [0.2, 0.4]. Tuning steps are not retained.
  bool tune = true;
  std::size_t tune_steps = 200;
  int tune_rounds = 20;
  std::size_t stall_limit = 1000;  // consecutive rejections that raise a warning
  std::uint64_t seed = 0;
  bool record_trace = false;

  void validate() const;
};

// Unnormalized log posterior of m given (d, e): the Gaussian log-likelihood
// -||d - F(m, e)||^2 / (2 sigma^2) plus the log prior. Forward failures give
// -inf and are counted.
class LogPosterior {
 public:
  LogPosterior(const models::TaskSpec& task, std::vector<double> d, std::vector<double> e, double sigma_obs);

  double operator()(std::span<const double> m) const;
  std::size_t n_obs() const { return n_obs_; }
  double sigma() const { return sigma_; }
  std::size_t failures() const { return failures_; }
  const std::string& last_failure() const { return last_failure_; }

 private:
  const models::TaskSpec* task_;
  std::vector<double> d_, e_;
  std::size_t n_obs_;
  double sigma_;
  mutable std::size_t failures_ = 0;
  mutable std::string last_failure_;
};

double log_posterior(const models::TaskSpec& task, std::span<const double> m, std::span<const double> d,
                     std::span<const double> e, double sigma_obs);

// Noise level matching data generation. For the Darcy task the relative
// level is applied to max |d|, the observable stand-in for max |u|.
double default_sigma_obs(const models::TaskSpec& task, std::span<const double> d);

using LogTarget = std::function<double(std::span<const double>)>;

struct ChainState {
  std::vector<double> m;
  double log_post = 0;
};

// One Gaussian random-walk step; returns whether the proposal was accepted.
// Draws dim normals then one uniform from rng, whatever the outcome.
bool mh_step(ChainState& state, const LogTarget& target, std::span<const double> scale, Rng& rng);

struct TraceRow {
  std::vector<double> m;
  double log_post = 0;
  bool accepted = false;
};

struct ChainResult {
  std::size_t dim = 0;
  std::vector<double> samples;  // retained, [n_retained, dim]
  std::vector<double> mean;
  double acceptance = 0;        // over the n_samples post-tuning steps
  std::vector<double> proposal_scale;
  double seconds = 0;
  std::vector<std::string> warnings;
  std::vector<TraceRow> trace;  // every post-tuning step when recorded

  std::size_t retained() const { return dim ? samples.size() / dim : 0; }
};

// Generic driver: the start point is drawn by `init`.
ChainResult run_chain(const LogTarget& target, std::size_t dim, const std::function<void(Rng&, std::span<double>)>& init,
                      const ChainConfig& cfg);

// Chain on the task posterior, started from a prior draw.
ChainResult run_chain(const models::TaskSpec& task, std::span<const double> d, std::span<const double> e,
                      const ChainConfig& cfg);

// Columns: step, m_0 .. m_{dim-1}, log_posterior, accepted.
void write_chain_csv(const ChainResult& result, const std::filesystem::path& path);

}  // namespace cfm::mcmc
