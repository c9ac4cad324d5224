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

// Flat configuration for every pipeline stage.
//
// File grammar, one item per line:
//   # comment            [section]            key = value
// A key inside [section] is addressed as section.key; a dotted key may also
// appear outside any section. Lists are comma separated. Task-dependent
// defaults are applied first, so only run.task decides them.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cfm/cfm_engine.hpp"
#include "cfm/data_pipeline.hpp"
#include "cfm/forward_models.hpp"
#include "cfm/mcmc_baseline.hpp"
#include "cfm/velocity_net.hpp"

namespace cfm::app {

// Bad configuration or command line: exit code 1.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  models::TaskId task = models::TaskId::kNonlinear;
  std::uint64_t seed = 0;
  std::string out_dir;     // empty: $CFM_OUT_DIR, else "out"
  std::string dataset;     // empty: <out_dir>/dataset_<task>.bin
  std::string checkpoint;  // empty: <out_dir>/checkpoint_<task>.bin
  std::string kl_cache;    // empty: <out_dir>/kl_cache

  models::NoiseConfig noise;
  models::SeirConstants seir;
  models::DarcyConstants darcy;

  data::DataGenConfig data;
  net::NetConfig net;
  engine::TrainConfig train;
  bool resume = false;

  engine::SamplerConfig sampler;
  std::size_t sample_n_obs = 4;
  std::size_t sample_trial = 0;   // synthetic problem index when d/e are not given
  std::vector<double> sample_d, sample_e;

  std::vector<std::size_t> eval_n_list{4, 5, 6, 7, 8};
  std::size_t eval_trials = 100;
  bool eval_generation = false;
  std::size_t gen_inferences = 10000;
  std::size_t gen_block = 100;
  std::size_t field_ensemble = 50;

  mcmc::ChainConfig chain;
  std::vector<std::size_t> mcmc_n_list{8};
  std::size_t mcmc_trials = 1;

  std::size_t bench_n_obs = 8;
  std::size_t bench_chain_samples = 10000;

  std::size_t paths_probes = 32;
  std::size_t paths_n_obs = 1;
  int paths_steps = 100;

  static RunConfig defaults_for(models::TaskId task);

  std::filesystem::path resolved_out_dir() const;
  std::filesystem::path dataset_path() const;
  std::filesystem::path checkpoint_path() const;
  std::filesystem::path kl_cache_dir() const;

  models::TaskSpec task_spec() const;  // builds or loads the KL basis for darcy
};

struct ConfigKey {
  std::string name;
  std::string help;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

const std::vector<ConfigKey>& config_keys();
std::string describe_keys();

// key = value pairs in file order.
std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text, const std::string& label);
std::vector<std::pair<std::string, std::string>> parse_config_file(const std::filesystem::path& path);

// Applies assignments on top of the defaults of the task they select.
// Throws UsageError naming unknown keys and bad values.
RunConfig build_config(const std::vector<std::pair<std::string, std::string>>& assignments);

// Every key with its current value, sorted by key.
std::map<std::string, std::string> snapshot(const RunConfig& cfg);

}  // namespace cfm::app
