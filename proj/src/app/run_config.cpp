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

#include "cfm/run_config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <memory>
#include <sstream>

namespace cfm::app {

namespace {

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const auto s = trim(text);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
    throw UsageError("bad value '" + text + "' for " + key);
  }
  return v;
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

bool parse_bool(const std::string& key, const std::string& text) {
  const auto s = trim(text);
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw UsageError("bad boolean '" + text + "' for " + key);
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& text) {
  std::vector<T> out;
  const auto s = trim(text);
  if (s.empty()) return out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<T>(key, item));
  return out;
}

template <typename T>
std::string format_list(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    if constexpr (std::is_floating_point_v<T>) {
      out += format_double(v[i]);
    } else {
      out += std::to_string(v[i]);
    }
  }
  return out;
}

// Wraps enum parsers that throw std::invalid_argument.
template <typename F>
auto as_usage(const std::string& key, F&& parse) {
  try {
    return parse();
  } catch (const std::invalid_argument& e) {
    throw UsageError(key + ": " + e.what());
  }
}

template <typename T, typename Member>
ConfigKey number_key(std::string name, std::string help, Member member) {
  return {name, std::move(help),
          [member](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<T>) {
              return format_double(member(c));
            } else {
              return std::to_string(member(c));
            }
          },
          [member, name](RunConfig& c, const std::string& v) { member(c) = parse_number<T>(name, v); }};
}

template <typename Member>
ConfigKey bool_key(std::string name, std::string help, Member member) {
  return {name, std::move(help),
          [member](const RunConfig& c) { return std::string(member(c) ? "true" : "false"); },
          [member, name](RunConfig& c, const std::string& v) { member(c) = parse_bool(name, v); }};
}

template <typename Member>
ConfigKey string_key(std::string name, std::string help, Member member) {
  return {name, std::move(help), [member](const RunConfig& c) { return member(c); },
          [member](RunConfig& c, const std::string& v) { member(c) = trim(v); }};
}

template <typename T, typename Member>
ConfigKey list_key(std::string name, std::string help, Member member) {
  return {name, std::move(help), [member](const RunConfig& c) { return format_list(member(c)); },
          [member, name](RunConfig& c, const std::string& v) { member(c) = parse_list<T>(name, v); }};
}

// Accessor usable on const and mutable configs alike.
#define CFG_MEMBER(expr) [](auto& c) -> auto& { return expr; }

std::vector<ConfigKey> make_keys() {
  std::vector<ConfigKey> k;
  k.push_back({"run.task", "nonlinear | seir | darcy (selects the defaults)",
               [](const RunConfig& c) { return std::string(models::task_name(c.task)); },
               [](RunConfig& c, const std::string& v) {
                 c.task = as_usage("run.task", [&] { return models::parse_task(trim(v)); });
               }});
  k.push_back(number_key<std::uint64_t>("run.seed", "master seed for every random stream", CFG_MEMBER(c.seed)));
  k.push_back(string_key("run.out_dir", "output directory (default $CFM_OUT_DIR, else ./out)", CFG_MEMBER(c.out_dir)));
  k.push_back(string_key("run.dataset", "dataset file (default <out_dir>/dataset_<task>.bin)", CFG_MEMBER(c.dataset)));
  k.push_back(
      string_key("run.checkpoint", "checkpoint file (default <out_dir>/checkpoint_<task>.bin)", CFG_MEMBER(c.checkpoint)));
  k.push_back(string_key("run.kl_cache", "KL basis cache directory (default <out_dir>/kl_cache)", CFG_MEMBER(c.kl_cache)));

  k.push_back(number_key<double>("noise.nonlinear", "observation noise sigma, nonlinear task", CFG_MEMBER(c.noise.nonlinear)));
  k.push_back(number_key<double>("noise.seir", "observation noise sigma, SEIR (population units)", CFG_MEMBER(c.noise.seir)));
  k.push_back(number_key<double>("noise.darcy_relative", "darcy noise sigma as a fraction of max |u|",
                                 CFG_MEMBER(c.noise.darcy_relative)));

  k.push_back({"seir.transition", "rate transition: smooth | printed",
               [](const RunConfig& c) { return std::string(models::transition_name(c.seir.transition)); },
               [](RunConfig& c, const std::string& v) {
                 c.seir.transition = as_usage("seir.transition", [&] { return models::parse_transition(trim(v)); });
               }});
  k.push_back(number_key<double>("seir.tau", "rate transition time", CFG_MEMBER(c.seir.tau)));

  k.push_back(number_key<int>("darcy.nodes", "grid nodes per side", CFG_MEMBER(c.darcy.nodes_per_side)));
  k.push_back(number_key<double>("darcy.sigma_w", "boundary bump width", CFG_MEMBER(c.darcy.boundary_width)));
  k.push_back(number_key<double>("darcy.tolerance", "linear solve relative residual", CFG_MEMBER(c.darcy.cg_tolerance)));
  k.push_back({"darcy.linear_solver", "cg | cholesky",
               [](const RunConfig& c) { return std::string(models::linear_solver_name(c.darcy.linear_solver)); },
               [](RunConfig& c, const std::string& v) {
                 c.darcy.linear_solver =
                     as_usage("darcy.linear_solver", [&] { return models::parse_linear_solver(trim(v)); });
               }});

  k.push_back(number_key<std::uint64_t>("data.tuples_per_n", "tuples per observation count", CFG_MEMBER(c.data.tuples_per_n)));
  k.push_back(list_key<std::uint32_t>("data.n_obs", "observation counts, e.g. 4,5,6,7,8", CFG_MEMBER(c.data.n_obs_set)));
  k.push_back(bool_key("data.share_solves", "reuse one forward solve across observation counts",
                       CFG_MEMBER(c.data.share_solves)));
  k.push_back(number_key<unsigned>("data.threads", "generation threads (0 = all cores)", CFG_MEMBER(c.data.threads)));

  k.push_back({"net.arch", "transformer | mlp", [](const RunConfig& c) { return std::string(net::arch_name(c.net.arch)); },
               [](RunConfig& c, const std::string& v) {
                 c.net.arch = as_usage("net.arch", [&] { return net::parse_arch(trim(v)); });
               }});
  k.push_back(number_key<int>("net.n_emb", "embedding width", CFG_MEMBER(c.net.n_emb)));
  k.push_back(number_key<int>("net.n_head", "attention heads", CFG_MEMBER(c.net.n_head)));
  k.push_back(number_key<int>("net.n_layer", "transformer blocks", CFG_MEMBER(c.net.n_layer)));
  k.push_back(number_key<double>("net.rope_base", "rotary embedding base", CFG_MEMBER(c.net.rope_base)));
  k.push_back(number_key<int>("net.time_freq_dim", "sinusoidal timestep features", CFG_MEMBER(c.net.time_freq_dim)));
  k.push_back(number_key<int>("net.mlp_width", "MLP variant hidden width", CFG_MEMBER(c.net.mlp_width)));
  k.push_back(number_key<int>("net.mlp_depth", "MLP variant hidden layers", CFG_MEMBER(c.net.mlp_depth)));
  k.push_back(number_key<int>("net.mlp_n_obs", "observation count accepted by the MLP variant", CFG_MEMBER(c.net.mlp_n_obs)));

  k.push_back(number_key<double>("train.lr", "Adam learning rate", CFG_MEMBER(c.train.lr)));
  k.push_back(number_key<int>("train.epochs", "epochs", CFG_MEMBER(c.train.epochs)));
  k.push_back(number_key<std::size_t>("train.batch_size", "batch size", CFG_MEMBER(c.train.batch_size)));
  k.push_back(number_key<int>("train.accumulate", "batches per optimizer step", CFG_MEMBER(c.train.accumulate)));
  k.push_back(number_key<int>("train.checkpoint_every", "checkpoint cadence in epochs (0 = final only)",
                              CFG_MEMBER(c.train.checkpoint_every)));
  k.push_back({"train.schedule", "constant | cosine",
               [](const RunConfig& c) { return std::string(engine::schedule_name(c.train.schedule)); },
               [](RunConfig& c, const std::string& v) {
                 c.train.schedule = as_usage("train.schedule", [&] { return engine::parse_schedule(trim(v)); });
               }});
  k.push_back(number_key<double>("train.min_lr_fraction", "cosine schedule floor", CFG_MEMBER(c.train.min_lr_fraction)));
  k.push_back(bool_key("train.resume", "continue from the checkpoint file", CFG_MEMBER(c.resume)));

  k.push_back(number_key<int>("sample.steps", "integration steps", CFG_MEMBER(c.sampler.steps)));
  k.push_back({"sample.method", "euler | midpoint | rk4",
               [](const RunConfig& c) { return std::string(engine::integrator_name(c.sampler.method)); },
               [](RunConfig& c, const std::string& v) {
                 c.sampler.method = as_usage("sample.method", [&] { return engine::parse_integrator(trim(v)); });
               }});
  k.push_back(number_key<std::size_t>("sample.ensemble", "ensemble members", CFG_MEMBER(c.sampler.ensemble)));
  k.push_back(number_key<std::size_t>("sample.max_rows", "rows per network evaluation", CFG_MEMBER(c.sampler.max_rows)));
  k.push_back(number_key<std::size_t>("sample.n_obs", "observation count of the problem", CFG_MEMBER(c.sample_n_obs)));
  k.push_back(number_key<std::size_t>("sample.trial", "synthetic problem index when d and e are empty",
                                      CFG_MEMBER(c.sample_trial)));
  k.push_back(list_key<double>("sample.d", "observations (comma separated)", CFG_MEMBER(c.sample_d)));
  k.push_back(list_key<double>("sample.e", "design (comma separated)", CFG_MEMBER(c.sample_e)));

  k.push_back(list_key<std::size_t>("eval.n_list", "observation counts to evaluate", CFG_MEMBER(c.eval_n_list)));
  k.push_back(number_key<std::size_t>("eval.trials", "trials per observation count", CFG_MEMBER(c.eval_trials)));
  k.push_back(bool_key("eval.generation", "also compute the observation reconstruction error",
                       CFG_MEMBER(c.eval_generation)));
  k.push_back(number_key<std::size_t>("eval.gen_inferences", "inferences for the reconstruction error",
                                      CFG_MEMBER(c.gen_inferences)));
  k.push_back(number_key<std::size_t>("eval.gen_block", "inferences pooled per reconstruction block",
                                      CFG_MEMBER(c.gen_block)));
  k.push_back(number_key<std::size_t>("eval.field_ensemble", "ensemble size for the darcy field table",
                                      CFG_MEMBER(c.field_ensemble)));

  k.push_back(number_key<std::size_t>("mcmc.n_samples", "chain length after tuning", CFG_MEMBER(c.chain.n_samples)));
  k.push_back(list_key<double>("mcmc.proposal_scale", "per-coordinate proposal sd (empty = 0.1 each)",
                               CFG_MEMBER(c.chain.proposal_scale)));
  k.push_back(number_key<double>("mcmc.burn_in", "discarded fraction", CFG_MEMBER(c.chain.burn_in)));
  k.push_back({"mcmc.sigma_obs", "likelihood sigma (empty = data-generation noise)",
               [](const RunConfig& c) { return c.chain.sigma_obs ? format_double(*c.chain.sigma_obs) : std::string(); },
               [](RunConfig& c, const std::string& v) {
                 if (trim(v).empty()) {
                   c.chain.sigma_obs.reset();
                 } else {
                   c.chain.sigma_obs = parse_number<double>("mcmc.sigma_obs", v);
                 }
               }});
  k.push_back(bool_key("mcmc.tune", "pre-run proposal tuning", CFG_MEMBER(c.chain.tune)));
  k.push_back(number_key<std::size_t>("mcmc.tune_steps", "steps per tuning round", CFG_MEMBER(c.chain.tune_steps)));
  k.push_back(number_key<int>("mcmc.tune_rounds", "maximum tuning rounds", CFG_MEMBER(c.chain.tune_rounds)));
  k.push_back(list_key<std::size_t>("mcmc.n_list", "observation counts", CFG_MEMBER(c.mcmc_n_list)));
  k.push_back(number_key<std::size_t>("mcmc.trials", "chains per observation count", CFG_MEMBER(c.mcmc_trials)));

  k.push_back(number_key<std::size_t>("bench.n_obs", "observation count of the timed problem", CFG_MEMBER(c.bench_n_obs)));
  k.push_back(number_key<std::size_t>("bench.chain_samples", "length of the timed chain", CFG_MEMBER(c.bench_chain_samples)));

  k.push_back(number_key<std::size_t>("paths.probes", "trajectories to trace", CFG_MEMBER(c.paths_probes)));
  k.push_back(number_key<std::size_t>("paths.n_obs", "observation count of the probe problem", CFG_MEMBER(c.paths_n_obs)));
  k.push_back(number_key<int>("paths.steps", "integration steps per trajectory", CFG_MEMBER(c.paths_steps)));
  return k;
}

#undef CFG_MEMBER

}  // namespace

RunConfig RunConfig::defaults_for(models::TaskId task) {
  RunConfig c;
  c.task = task;
  std::size_t dim = 1;
  switch (task) {
    case models::TaskId::kNonlinear:
      dim = 1;
      c.data.n_obs_set = {1};
      c.data.tuples_per_n = 100000;
      c.train.lr = 8e-4;
      c.train.epochs = 40;
      c.train.schedule = engine::LrSchedule::kCosine;
      c.sample_n_obs = c.paths_n_obs = c.bench_n_obs = 1;
      c.eval_n_list = {1};
      c.mcmc_n_list = {1};
      c.eval_generation = true;
      break;
    case models::TaskId::kSeir:
      dim = models::kSeirParams;
      c.data.tuples_per_n = 50000;
      c.train.lr = 8e-4;
      c.train.epochs = 60;
      c.sample_n_obs = c.paths_n_obs = c.bench_n_obs = 8;
      break;
    case models::TaskId::kDarcy:
      dim = 16;
      c.data.tuples_per_n = 50000;
      c.data.share_solves = true;
      c.train.lr = 3e-4;
      c.train.epochs = 100;
      c.sample_n_obs = c.paths_n_obs = c.bench_n_obs = 8;
      break;
  }
  c.net = net::default_config(task, static_cast<int>(dim), net::Arch::kTransformer);
  return c;
}

std::filesystem::path RunConfig::resolved_out_dir() const {
  if (!out_dir.empty()) return out_dir;
  if (const char* env = std::getenv("CFM_OUT_DIR"); env && *env) return env;
  return "out";
}

std::filesystem::path RunConfig::dataset_path() const {
  if (!dataset.empty()) return dataset;
  return resolved_out_dir() / ("dataset_" + std::string(models::task_name(task)) + ".bin");
}

std::filesystem::path RunConfig::checkpoint_path() const {
  if (!checkpoint.empty()) return checkpoint;
  return resolved_out_dir() / ("checkpoint_" + std::string(models::task_name(task)) + ".bin");
}

std::filesystem::path RunConfig::kl_cache_dir() const {
  if (!kl_cache.empty()) return kl_cache;
  return resolved_out_dir() / "kl_cache";
}

models::TaskSpec RunConfig::task_spec() const {
  switch (task) {
    case models::TaskId::kNonlinear:
      return models::TaskSpec::nonlinear(noise);
    case models::TaskId::kSeir:
      return models::TaskSpec::seir(seir, noise);
    case models::TaskId::kDarcy:
      return models::TaskSpec::darcy(std::make_shared<models::KlBasis>(models::load_or_build_kl_basis(darcy, kl_cache_dir())),
                                     noise);
  }
  throw std::logic_error("unknown task");
}

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = make_keys();
  return keys;
}

std::string describe_keys() {
  const auto defaults = RunConfig::defaults_for(models::TaskId::kSeir);
  std::ostringstream os;
  os << "Configuration keys (run.task defaults to nonlinear; other defaults shown are those of seir):\n";
  for (const auto& k : config_keys()) {
    os << "  " << k.name;
    const auto v = k.name == "run.task" ? std::string("nonlinear") : k.get(defaults);
    os << std::string(k.name.size() < 24 ? 24 - k.name.size() : 1, ' ') << k.help;
    if (!v.empty()) os << " [" << v << "]";
    os << '\n';
  }
  return os.str();
}

std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text, const std::string& label) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in(text);
  std::string line, section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw UsageError(label + ":" + std::to_string(line_no) + ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError(label + ":" + std::to_string(line_no) + ": expected key = value");
    auto key = trim(line.substr(0, eq));
    if (key.find('.') == std::string::npos) {
      if (section.empty()) throw UsageError(label + ":" + std::to_string(line_no) + ": key '" + key + "' outside a section");
      key = section + "." + key;
    }
    out.emplace_back(key, trim(line.substr(eq + 1)));
  }
  return out;
}

std::vector<std::pair<std::string, std::string>> parse_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("config file not found: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path.string());
}

RunConfig build_config(const std::vector<std::pair<std::string, std::string>>& assignments) {
  const auto& keys = config_keys();
  auto find = [&](const std::string& name) -> const ConfigKey& {
    const auto it = std::find_if(keys.begin(), keys.end(), [&](const ConfigKey& k) { return k.name == name; });
    if (it == keys.end()) throw UsageError("unknown configuration key '" + name + "'\n" + describe_keys());
    return *it;
  };
  models::TaskId task = models::TaskId::kNonlinear;
  for (const auto& [k, v] : assignments) {
    find(k);
    if (k == "run.task") task = as_usage("run.task", [&] { return models::parse_task(trim(v)); });
  }
  auto cfg = RunConfig::defaults_for(task);
  for (const auto& [k, v] : assignments) find(k).set(cfg, v);

  cfg.net.task = cfg.task;
  cfg.data.seed = cfg.train.seed = cfg.sampler.seed = cfg.chain.seed = cfg.seed;
  try {
    cfg.net.validate();
    cfg.train.validate();
    cfg.sampler.validate();
    cfg.chain.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return cfg;
}

std::map<std::string, std::string> snapshot(const RunConfig& cfg) {
  std::map<std::string, std::string> out;
  for (const auto& k : config_keys()) out[k.name] = k.get(cfg);
  return out;
}

}  // namespace cfm::app
