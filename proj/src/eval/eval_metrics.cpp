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

#include "cfm/eval_metrics.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "cfm/rng.hpp"

namespace cfm::eval {

double relative_error_obs(std::span<const double> d, std::span<const double> d_hat) {
  if (d.size() != d_hat.size()) {
    throw std::invalid_argument("relative error: sizes " + std::to_string(d.size()) + " and " +
                                std::to_string(d_hat.size()) + " differ");
  }
  double num = 0, den = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    num += (d[i] - d_hat[i]) * (d[i] - d_hat[i]);
    den += d[i] * d[i];
  }
  if (den == 0.0) throw std::domain_error("relative error: reference has zero norm");
  return std::sqrt(num / den);
}

double relative_error_de(const models::TaskSpec& task, std::span<const double> m_true,
                         std::span<const double> m_estimate, std::span<const double> shared_design) {
  const auto truth = task.full_solution(m_true, shared_design);
  const auto estimate = task.full_solution(m_estimate, shared_design);
  return relative_error_obs(truth, estimate);
}

double relative_error_de(const models::TaskSpec& task, std::span<const double> m_true,
                         const engine::PosteriorEnsemble& ensemble) {
  if (ensemble.members() == 0) throw std::invalid_argument("relative error: empty ensemble");
  // Members may overshoot a bounded support; the posterior mean cannot.
  auto mean = ensemble.mean();
  task.project_to_support(mean);
  return relative_error_de(task, m_true, mean,
                           std::span<const double>(ensemble.e).first(task.shared_design_len()));
}

ErrorStats summarize(std::span<const double> values) {
  ErrorStats s;
  s.count = values.size();
  if (values.empty()) return s;
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(values.size());
  double ss = 0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(ss / static_cast<double>(values.size()));
  return s;
}

std::vector<Trial> draw_trials(const models::TaskSpec& task, std::size_t n_obs, std::size_t count,
                               std::uint64_t seed, std::uint64_t key, std::size_t first) {
  std::vector<Trial> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(derive_seed(seed, Stream::kEval, {key, first + i}));
    auto& t = out[i];
    t.m_true.resize(task.dim_m());
    task.sample_prior(rng, t.m_true);
    t.problem.e.resize(task.e_len(n_obs));
    task.sample_design(rng, n_obs, t.problem.e);
    const auto solved = task.solve(t.m_true, std::span<const double>(t.problem.e).first(task.shared_design_len()));
    t.problem.d = task.observe(solved, t.problem.e, n_obs);
    const double sigma = task.noise_sigma(solved);
    for (double& v : t.problem.d) v += sigma * rng.normal();
  }
  return out;
}

namespace {

std::vector<engine::Problem> problems_of(const std::vector<Trial>& trials) {
  std::vector<engine::Problem> out;
  out.reserve(trials.size());
  for (const auto& t : trials) out.push_back(t.problem);
  return out;
}

}  // namespace

EvalReport evaluate_sweep(ad::ParameterSet<float>& params, const net::NetConfig& cfg, const models::TaskSpec& task,
                          const SweepConfig& sweep) {
  EvalReport report;
  report.task = task.id();
  report.ensemble = sweep.sampler.ensemble;
  for (std::size_t n : sweep.n_list) {
    const auto trials = draw_trials(task, n, sweep.trials, sweep.seed, n);
    const auto problems = problems_of(trials);
    // Sampler streams are keyed by (n, trial) so rows do not share noise.
    const auto ensembles =
        engine::sample_posterior(params, cfg, task, n, problems, sweep.sampler, static_cast<std::uint64_t>(n) << 32);
    SweepRow row;
    row.n_obs = n;
    for (std::size_t i = 0; i < trials.size(); ++i) {
      row.errors.push_back(relative_error_de(task, trials[i].m_true, ensembles[i]));
    }
    row.stats = summarize(row.errors);
    report.rows.push_back(std::move(row));
  }
  return report;
}

GenerationReport generation_error(ad::ParameterSet<float>& params, const net::NetConfig& cfg,
                                  const models::TaskSpec& task, const GenerationConfig& gen) {
  if (gen.block == 0 || gen.inferences == 0) throw std::invalid_argument("generation error: empty schedule");
  const auto trials = draw_trials(task, gen.n_obs, gen.inferences, gen.seed, 0);
  const auto problems = problems_of(trials);
  const auto ensembles = engine::sample_posterior(params, cfg, task, gen.n_obs, problems, gen.sampler);

  std::vector<double> block_errors, ratios;
  double num = 0, den = 0;
  std::size_t in_block = 0;
  for (std::size_t i = 0; i < trials.size(); ++i) {
    const auto& d = trials[i].problem.d;
    const auto d_hat = task.forward(ensembles[i].mean(), trials[i].problem.e, gen.n_obs);
    double r2 = 0, d2 = 0;
    for (std::size_t k = 0; k < d.size(); ++k) {
      r2 += (d[k] - d_hat[k]) * (d[k] - d_hat[k]);
      d2 += d[k] * d[k];
    }
    if (d2 > 0) ratios.push_back(std::sqrt(r2 / d2));
    num += r2;
    den += d2;
    if (++in_block == gen.block || i + 1 == trials.size()) {
      if (den > 0) block_errors.push_back(std::sqrt(num / den));
      num = den = 0;
      in_block = 0;
    }
  }
  GenerationReport out;
  out.blocks = summarize(block_errors);
  out.per_inference = summarize(ratios);
  if (!ratios.empty()) {
    auto mid = ratios.begin() + static_cast<std::ptrdiff_t>(ratios.size() / 2);
    std::nth_element(ratios.begin(), mid, ratios.end());
    out.per_inference_median = *mid;
  }
  return out;
}

TimingReport benchmark_timing(ad::ParameterSet<float>& params, const net::NetConfig& cfg,
                              const models::TaskSpec& task, std::size_t n_obs, const engine::SamplerConfig& sampler,
                              const mcmc::ChainConfig& chain, std::uint64_t seed) {
  const auto trial = draw_trials(task, n_obs, 1, seed, 0).front();
  const std::vector<engine::Problem> one{trial.problem};
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  const auto ens = engine::sample_posterior(params, cfg, task, n_obs, one, sampler);
  const auto t1 = clock::now();
  TimingReport r;
  r.cfm_seconds = std::chrono::duration<double>(t1 - t0).count();
  if (chain.n_samples > 0) {
    const auto t2 = clock::now();
    mcmc::run_chain(task, trial.problem.d, trial.problem.e, chain);
    r.mcmc_seconds = std::chrono::duration<double>(clock::now() - t2).count();
  }
  r.ratio = r.cfm_seconds > 0 ? r.mcmc_seconds / r.cfm_seconds : 0.0;
  return r;
}

// ---- tables -----------------------------------------------------------------

std::vector<SweepTableRow> sweep_table(const EvalReport& report) {
  std::vector<SweepTableRow> out;
  for (const auto& row : report.rows) out.push_back({row.n_obs, 100.0 * row.stats.mean, 100.0 * row.stats.std});
  return out;
}

namespace {

std::ofstream open_csv(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.precision(17);
  return out;
}

void finish_csv(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path, std::string_view header) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != header) {
    throw std::runtime_error(path.string() + ": expected header '" + std::string(header) + "'");
  }
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(std::move(cells));
  }
  return rows;
}

template <typename T>
T parse_cell(const std::string& s) {
  T v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw std::runtime_error("bad CSV value '" + s + "'");
  return v;
}

constexpr std::string_view kSweepHeader = "N,mean_error_pct,std_error_pct";
constexpr std::string_view kMcmcHeader = "N,n_sample,error_pct";

}  // namespace

void write_sweep_csv(std::span<const SweepTableRow> rows, const std::filesystem::path& path) {
  auto out = open_csv(path);
  out << kSweepHeader << '\n';
  for (const auto& r : rows) out << r.n_obs << ',' << r.mean_error_pct << ',' << r.std_error_pct << '\n';
  finish_csv(out, path);
}

std::vector<SweepTableRow> read_sweep_csv(const std::filesystem::path& path) {
  std::vector<SweepTableRow> out;
  for (const auto& cells : read_csv(path, kSweepHeader)) {
    if (cells.size() != 3) throw std::runtime_error(path.string() + ": expected 3 columns");
    out.push_back({parse_cell<std::size_t>(cells[0]), parse_cell<double>(cells[1]), parse_cell<double>(cells[2])});
  }
  return out;
}

void write_mcmc_csv(std::span<const McmcTableRow> rows, const std::filesystem::path& path) {
  auto out = open_csv(path);
  out << kMcmcHeader << '\n';
  for (const auto& r : rows) out << r.n_obs << ',' << r.n_sample << ',' << r.error_pct << '\n';
  finish_csv(out, path);
}

std::vector<McmcTableRow> read_mcmc_csv(const std::filesystem::path& path) {
  std::vector<McmcTableRow> out;
  for (const auto& cells : read_csv(path, kMcmcHeader)) {
    if (cells.size() != 3) throw std::runtime_error(path.string() + ": expected 3 columns");
    out.push_back(
        {parse_cell<std::size_t>(cells[0]), parse_cell<std::size_t>(cells[1]), parse_cell<double>(cells[2])});
  }
  return out;
}

void write_field_csv(const models::TaskSpec& task, std::span<const double> m_true, std::span<const double> m_mean,
                     std::span<const double> shared_design, const std::filesystem::path& path) {
  if (task.id() != models::TaskId::kDarcy) throw std::invalid_argument("field CSV: only the darcy task has fields");
  const auto& basis = task.kl_basis();
  const auto log_true = models::kl_expand(basis, m_true);
  const auto log_mean = models::kl_expand(basis, m_mean);
  const auto u_true = task.full_solution(m_true, shared_design);
  const auto u_recon = task.full_solution(m_mean, shared_design);
  auto out = open_csv(path);
  out << "x,y,logk_true,logk_mean,u_true,u_recon\n";
  const int n = log_true.n;
  const double h = log_true.h();
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const auto k = static_cast<std::size_t>(i) * n + j;
      out << i * h << ',' << j * h << ',' << log_true.values[k] << ',' << log_mean.values[k] << ',' << u_true[k]
          << ',' << u_recon[k] << '\n';
    }
  }
  finish_csv(out, path);
}

}  // namespace cfm::eval
