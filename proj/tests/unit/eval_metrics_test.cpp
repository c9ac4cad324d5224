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

#include <fstream>

#include "cfm/eval_metrics.hpp"
#include "doctest.h"

using namespace cfm;
using namespace cfm::eval;
using models::TaskSpec;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("cfm_eval_test_" + name);
}

std::shared_ptr<models::KlBasis> small_basis() {
  models::DarcyConstants c;
  c.nodes_per_side = 17;
  return std::make_shared<models::KlBasis>(models::kl_basis_build(c));
}

engine::PosteriorEnsemble ensemble_of(std::vector<std::vector<double>> members, std::vector<double> e) {
  engine::PosteriorEnsemble ens;
  ens.dim_m = members.front().size();
  for (const auto& m : members) ens.samples.insert(ens.samples.end(), m.begin(), m.end());
  ens.e = std::move(e);
  return ens;
}

}  // namespace

TEST_CASE("observation error examples") {
  const std::vector<double> d{3.0, 4.0};
  CHECK(relative_error_obs(d, d) == 0.0);
  CHECK(relative_error_obs(d, std::vector<double>{0.0, 0.0}) == 1.0);
  CHECK(relative_error_obs(d, std::vector<double>{3.0, 0.0}) == doctest::Approx(0.8));
  const std::vector<double> scaled_d{-6.0, -8.0}, scaled_hat{-6.0, 0.0};
  CHECK(relative_error_obs(scaled_d, scaled_hat) == doctest::Approx(0.8));
  CHECK_THROWS_AS(relative_error_obs(std::vector<double>{0.0}, std::vector<double>{1.0}), std::domain_error);
  CHECK_THROWS_AS(relative_error_obs(d, std::vector<double>{1.0}), std::invalid_argument);
}

TEST_CASE("solution error vanishes at the truth and grows with corruption") {
  const auto basis = small_basis();
  const std::vector<TaskSpec> tasks{TaskSpec::nonlinear(), TaskSpec::seir(), TaskSpec::darcy(basis)};
  Rng rng(3);
  for (const auto& task : tasks) {
    std::vector<double> m(task.dim_m()), other(task.dim_m()), e(task.e_len(2));
    task.sample_prior(rng, m);
    task.sample_prior(rng, other);
    task.sample_design(rng, 2, e);
    const auto exact = ensemble_of({m}, e);
    CHECK(relative_error_de(task, m, exact) == 0.0);
    const auto corrupted = ensemble_of({m, other}, e);
    CHECK(relative_error_de(task, m, corrupted) > 0.0);
  }
  CHECK_THROWS_AS(relative_error_de(TaskSpec::seir(), std::vector<double>(6, 0.5), engine::PosteriorEnsemble{}),
                  std::invalid_argument);
}

TEST_CASE("summary statistics") {
  const std::vector<double> one{0.25};
  CHECK(summarize(one).std == 0.0);
  CHECK(summarize(one).mean == 0.25);
  const std::vector<double> two{1.0, 3.0};
  CHECK(summarize(two).mean == 2.0);
  CHECK(summarize(two).std == 1.0);
  CHECK(summarize({}).count == 0);
}

TEST_CASE("trials are reproducible and observations are noisy") {
  const auto task = TaskSpec::seir();
  const auto a = draw_trials(task, 4, 5, 7, 4);
  const auto b = draw_trials(task, 4, 5, 7, 4);
  const auto c = draw_trials(task, 4, 5, 7, 5);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(a[i].problem.d == b[i].problem.d);
    CHECK(a[i].m_true != c[i].m_true);
    const auto clean = task.forward(a[i].m_true, a[i].problem.e, 4);
    CHECK(clean != a[i].problem.d);
  }
}

TEST_CASE("sweep, generation error and timing run end to end") {
  const auto task = TaskSpec::nonlinear();
  auto cfg = net::default_config(models::TaskId::kNonlinear, 1, net::Arch::kTransformer);
  cfg.n_emb = 16;
  auto params = net::init_parameters<float>(cfg, 2);

  SweepConfig sweep;
  sweep.n_list = {1, 3};
  sweep.trials = 6;
  sweep.sampler.steps = 4;
  const auto r1 = evaluate_sweep(params, cfg, task, sweep);
  const auto r2 = evaluate_sweep(params, cfg, task, sweep);
  REQUIRE(r1.rows.size() == 2);
  CHECK(r1.rows[1].n_obs == 3);
  CHECK(r1.rows[0].errors == r2.rows[0].errors);
  CHECK(r1.rows[1].stats.count == 6);

  GenerationConfig gen;
  gen.inferences = 25;
  gen.block = 10;
  gen.sampler.steps = 3;
  const auto g = generation_error(params, cfg, task, gen);
  CHECK(g.blocks.count == 3);
  CHECK(g.per_inference.count == 25);
  CHECK(g.blocks.mean > 0.0);

  mcmc::ChainConfig chain;
  chain.n_samples = 0;
  engine::SamplerConfig sampler;
  sampler.steps = 5;
  const auto t = benchmark_timing(params, cfg, task, 1, sampler, chain, 1);
  CHECK(t.mcmc_seconds == 0.0);
  CHECK(t.cfm_seconds > 0.0);
}

TEST_CASE("tables round trip") {
  EvalReport report;
  report.rows.push_back(SweepRow{4, ErrorStats{0.028, 0.0123456789, 100}, {}});
  report.rows.push_back(SweepRow{8, ErrorStats{1.0 / 3.0, 0.1, 100}, {}});
  const auto table = sweep_table(report);
  const auto path = temp_file("sweep.csv");
  write_sweep_csv(table, path);
  const auto back = read_sweep_csv(path);
  REQUIRE(back.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(back[i].n_obs == table[i].n_obs);
    CHECK(back[i].mean_error_pct == table[i].mean_error_pct);
    CHECK(back[i].std_error_pct == table[i].std_error_pct);
  }

  write_sweep_csv({}, path);
  std::ifstream in(path);
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CHECK(content == "N,mean_error_pct,std_error_pct\n");
  CHECK(read_sweep_csv(path).empty());

  const std::vector<McmcTableRow> mcmc_rows{{8, 10000, 1.44}, {4, 5000, 2.0 / 7.0}};
  write_mcmc_csv(mcmc_rows, path);
  const auto mback = read_mcmc_csv(path);
  REQUIRE(mback.size() == 2);
  CHECK(mback[1].n_sample == 5000);
  CHECK(mback[1].error_pct == mcmc_rows[1].error_pct);
  CHECK_THROWS(read_sweep_csv(path));
  std::filesystem::remove(path);
}

TEST_CASE("darcy field table") {
  const auto task = TaskSpec::darcy(small_basis());
  std::vector<double> m(16, 0.3), mean(16, 0.0);
  const std::vector<double> design{0.3, 0.7};
  const auto path = temp_file("field.csv");
  write_field_csv(task, m, mean, design, path);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "x,y,logk_true,logk_mean,u_true,u_recon");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 17 * 17);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(write_field_csv(TaskSpec::seir(), m, mean, design, path), std::invalid_argument);
}
