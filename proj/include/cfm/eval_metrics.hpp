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

// Error metrics for posterior estimates, evaluation sweeps over observation
// counts, the CFM-versus-MCMC timing benchmark and the CSV tables.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "cfm/cfm_engine.hpp"
#include "cfm/forward_models.hpp"
#include "cfm/mcmc_baseline.hpp"

namespace cfm::eval {

// ||d - d_hat|| / ||d||; throws on a size mismatch or ||d|| = 0.
double relative_error_obs(std::span<const double> d, std::span<const double> d_hat);

// Relative error between the full solutions of m_true and m_estimate (see
// TaskSpec::full_solution); shared_design is the Darcy boundary design.
double relative_error_de(const models::TaskSpec& task, std::span<const double> m_true,
                         std::span<const double> m_estimate, std::span<const double> shared_design);

// Same, with the ensemble mean as the estimate and its own design.
double relative_error_de(const models::TaskSpec& task, std::span<const double> m_true,
                         const engine::PosteriorEnsemble& ensemble);

struct ErrorStats {
  double mean = 0;
  double std = 0;  // population standard deviation; 0 for one value
  std::size_t count = 0;
};
ErrorStats summarize(std::span<const double> values);

// A synthetic inverse problem with known answer.
struct Trial {
  std::vector<double> m_true;
  engine::Problem problem;
};

// Trial i is drawn from the stream (seed, key, i): m from the prior, then
// the design, then noisy observations. Returns trials first .. first+count-1.
std::vector<Trial> draw_trials(const models::TaskSpec& task, std::size_t n_obs, std::size_t count,
                               std::uint64_t seed, std::uint64_t key = 0, std::size_t first = 0);

struct SweepConfig {
  std::vector<std::size_t> n_list{4, 5, 6, 7, 8};
  std::size_t trials = 100;
  engine::SamplerConfig sampler;
  std::uint64_t seed = 0;
};

struct SweepRow {
  std::size_t n_obs = 0;
  ErrorStats stats;
  std::vector<double> errors;  // per trial
};

struct EvalReport {
  models::TaskId task = models::TaskId::kNonlinear;
  std::size_t ensemble = 0;
  std::vector<SweepRow> rows;
};

EvalReport evaluate_sweep(ad::ParameterSet<float>& params, const net::NetConfig& cfg, const models::TaskSpec& task,
                          const SweepConfig& sweep);

// Observation reconstruction: for each inference, d_hat = F(mean of the
// ensemble, e) without noise is compared with the observed d. Inferences
// are pooled into blocks, each block giving one error over its stacked
// observations; the block errors are summarized.
struct GenerationConfig {
  std::size_t inferences = 10000;
  std::size_t block = 100;
  std::size_t n_obs = 1;
  engine::SamplerConfig sampler;
  std::uint64_t seed = 0;
};

struct GenerationReport {
  ErrorStats blocks;
  // Unpooled ratios, which are heavy-tailed when ||d|| is near zero.
  ErrorStats per_inference;
  double per_inference_median = 0;
};

GenerationReport generation_error(ad::ParameterSet<float>& params, const net::NetConfig& cfg,
                                  const models::TaskSpec& task, const GenerationConfig& gen);

struct TimingReport {
  double cfm_seconds = 0;
  double mcmc_seconds = 0;
  double ratio = 0;  // mcmc / cfm
};

// Wall clock of one posterior ensemble against one chain on the same trial
// problem; both run on the calling thread.
TimingReport benchmark_timing(ad::ParameterSet<float>& params, const net::NetConfig& cfg,
                              const models::TaskSpec& task, std::size_t n_obs, const engine::SamplerConfig& sampler,
                              const mcmc::ChainConfig& chain, std::uint64_t seed);

// ---- tables -----------------------------------------------------------------

struct SweepTableRow {
  std::size_t n_obs = 0;
  double mean_error_pct = 0;
  double std_error_pct = 0;
};

struct McmcTableRow {
  std::size_t n_obs = 0;
  std::size_t n_sample = 0;
  double error_pct = 0;
};

std::vector<SweepTableRow> sweep_table(const EvalReport& report);

// Columns: N, mean_error_pct, std_error_pct.
void write_sweep_csv(std::span<const SweepTableRow> rows, const std::filesystem::path& path);
std::vector<SweepTableRow> read_sweep_csv(const std::filesystem::path& path);

// Columns: N, n_sample, error_pct.
void write_mcmc_csv(std::span<const McmcTableRow> rows, const std::filesystem::path& path);
std::vector<McmcTableRow> read_mcmc_csv(const std::filesystem::path& path);

// Darcy field comparison on the grid. Columns: x, y, logk_true, logk_mean,
// u_true, u_recon.
void write_field_csv(const models::TaskSpec& task, std::span<const double> m_true, std::span<const double> m_mean,
                     std::span<const double> shared_design, const std::filesystem::path& path);

}  // namespace cfm::eval
