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

#include "cfm/commands.hpp"

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <stdexcept>

#include "CLI11.hpp"
#include "cfm/checkpoint.hpp"
#include "cfm/eval_metrics.hpp"
#include "cfm/rng.hpp"

namespace cfm::app {

namespace fs = std::filesystem;

namespace {

std::string num(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
  return std::string(buf, ptr);
}

// LF-terminated CSV writer that fails loudly.
class Csv {
 public:
  Csv(const fs::path& path, const std::vector<std::string>& header) : path_(path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    out_.open(path, std::ios::binary);
    if (!out_) throw std::runtime_error("cannot write " + path.string());
    row(header);
  }
  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
    out_ << '\n';
  }
  void close() {
    out_.close();
    if (!out_) throw std::runtime_error("failed writing " + path_.string());
  }

 private:
  fs::path path_;
  std::ofstream out_;
};

std::string file_tag(const RunConfig& cfg) { return std::string(models::task_name(cfg.task)); }

// Collects the manifest of one subcommand run.
class RunContext {
 public:
  RunContext(std::string command, RunConfig cfg) : cfg_(std::move(cfg)), start_(std::chrono::steady_clock::now()) {
    out_dir_ = fs::absolute(cfg_.resolved_out_dir()).lexically_normal();
    fs::create_directories(out_dir_);
    cfg_.out_dir = out_dir_.string();
    manifest_.command = std::move(command);
    manifest_.seed = cfg_.seed;
  }

  RunConfig& cfg() { return cfg_; }
  fs::path out(const std::string& stem, const std::string& ext = ".csv") const {
    return out_dir_ / (stem + "_" + file_tag(cfg_) + ext);
  }

  // Records an input file bound to a path-valued config field; the field is
  // pinned to the absolute path so the manifest replays from anywhere.
  fs::path require_input(std::string RunConfig::*field, const fs::path& path, const std::string& what) {
    if (!fs::is_regular_file(path)) throw std::runtime_error(what + " not found: " + path.string());
    const auto abs = fs::absolute(path).lexically_normal();
    cfg_.*field = abs.string();
    manifest_.inputs[abs.string()] = file_sha1(abs);
    return abs;
  }

  void output(const fs::path& path, bool is_volatile = false) {
    const auto abs = fs::absolute(path).lexically_normal();
    const auto rel = abs.lexically_relative(out_dir_);
    const bool inside = !rel.empty() && *rel.begin() != "..";
    const auto key = inside ? rel.generic_string() : abs.string();
    manifest_.outputs[key] = file_sha1(abs);
    if (is_volatile) manifest_.volatile_outputs.push_back(key);
    spdlog::info("wrote {}", abs.string());
  }

  Manifest finish() {
    manifest_.config = snapshot(cfg_);
    manifest_.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    const auto path = manifest_path(out_dir_, manifest_.command, cfg_.task);
    write_manifest(manifest_, path);
    spdlog::info("manifest {}", path.string());
    return manifest_;
  }

 private:
  RunConfig cfg_;
  fs::path out_dir_;
  Manifest manifest_;
  std::chrono::steady_clock::time_point start_;
};

struct LoadedModel {
  net::NetConfig net;
  ad::ParameterSet<float> params;
};

LoadedModel load_model(RunContext& ctx) {
  const auto path = ctx.require_input(&RunConfig::checkpoint, ctx.cfg().checkpoint_path(), "checkpoint");
  auto ckpt = load_checkpoint(path);
  if (ckpt.state.net.task != ctx.cfg().task) {
    throw std::runtime_error(path.string() + " holds a " + std::string(models::task_name(ckpt.state.net.task)) +
                             " model, run.task is " + std::string(models::task_name(ctx.cfg().task)));
  }
  spdlog::info("loaded {} ({} parameters, step {})", path.string(), net::parameter_count(ckpt.state.net),
               ckpt.state.step);
  return {ckpt.state.net, std::move(ckpt.state.params)};
}

// Problem for sample and paths: explicit d/e, else synthetic trial
// sample.trial drawn exactly as evaluate draws it for the same N.
struct ChosenProblem {
  std::size_t n_obs = 0;
  engine::Problem problem;
  std::vector<double> m_true;  // empty when d/e were given
  std::uint64_t offset = 0;    // sampler stream offset
};

ChosenProblem choose_problem(const RunConfig& cfg, const models::TaskSpec& task, std::size_t n_obs) {
  ChosenProblem out;
  if (!cfg.sample_e.empty() || !cfg.sample_d.empty()) {
    out.n_obs = task.n_obs_from_e(cfg.sample_e.size());
    if (out.n_obs == 0 || cfg.sample_d.size() != task.d_len(out.n_obs)) {
      throw UsageError("sample.d has " + std::to_string(cfg.sample_d.size()) + " values, sample.e implies " +
                       std::to_string(task.d_len(out.n_obs)));
    }
    out.problem = {cfg.sample_d, cfg.sample_e};
    return out;
  }
  out.n_obs = n_obs;
  auto trial = eval::draw_trials(task, n_obs, 1, cfg.seed, n_obs, cfg.sample_trial).front();
  out.problem = std::move(trial.problem);
  out.m_true = std::move(trial.m_true);
  out.offset = (static_cast<std::uint64_t>(n_obs) << 32) + cfg.sample_trial;
  return out;
}

std::vector<std::string> coord_header(const std::string& first, const std::string& prefix, std::size_t dim) {
  std::vector<std::string> h{first};
  for (std::size_t k = 0; k < dim; ++k) h.push_back(prefix + std::to_string(k));
  return h;
}

// ---- subcommands --------------------------------------------------------------

void cmd_generate_data(RunContext& ctx) {
  auto& cfg = ctx.cfg();
  const auto task = cfg.task_spec();
  const auto ds = data::generate_dataset(task, cfg.data);
  spdlog::info("generated {} tuples in {} shards", ds.tuple_count(), ds.shards.size());
  const auto path = cfg.dataset_path();
  data::save_dataset(ds, task, path);
  ctx.output(path);
}

void cmd_train(RunContext& ctx) {
  auto& cfg = ctx.cfg();
  const auto task = cfg.task_spec();
  const auto ds_path = ctx.require_input(&RunConfig::dataset, cfg.dataset_path(), "dataset");
  const auto ds = data::load_dataset(ds_path, task);
  const auto checked = data::verify_dataset(ds, task);
  spdlog::info("dataset {}: {} tuples, {} re-verified", ds_path.string(), ds.tuple_count(), checked);

  const auto ckpt_path = cfg.checkpoint_path();
  std::unique_ptr<engine::TrainState> resume;
  if (cfg.resume) {
    ctx.require_input(&RunConfig::checkpoint, ckpt_path, "checkpoint");
    auto ckpt = load_checkpoint(ckpt_path);
    if (ckpt.rng_seed != cfg.train.seed) {
      throw std::runtime_error("checkpoint was trained with seed " + std::to_string(ckpt.rng_seed) +
                               ", run.seed is " + std::to_string(cfg.train.seed));
    }
    if (!(ckpt.state.net == cfg.net)) throw std::runtime_error("checkpoint network config differs from net.*");
    spdlog::info("resuming at epoch {} step {}", ckpt.state.epochs_done, ckpt.state.step);
    resume = std::make_unique<engine::TrainState>(std::move(ckpt.state));
  }
  spdlog::info("training {} ({} parameters), {} epochs", net::arch_name(cfg.net.arch),
               net::parameter_count(cfg.net), cfg.train.epochs);

  const auto last_good = fs::path(ckpt_path.string() + ".last_good");
  auto on_checkpoint = [&](const engine::TrainState& s, engine::CheckpointReason reason) {
    const Checkpoint ckpt{s, cfg.train.seed};
    if (reason == engine::CheckpointReason::kDiverged) {
      save_checkpoint(ckpt, last_good);
      spdlog::error("last good state saved to {}", last_good.string());
      return;
    }
    save_checkpoint(ckpt, ckpt_path);
    spdlog::info("checkpoint epoch {} step {}", s.epochs_done, s.step);
  };
  int epoch_seen = -1;
  double epoch_sum = 0;
  long epoch_steps = 0;
  auto on_step = [&](const engine::LossRecord& r) {
    if (r.epoch != epoch_seen) {
      if (epoch_steps) spdlog::info("epoch {} mean loss {:.6g}", epoch_seen, epoch_sum / epoch_steps);
      epoch_seen = r.epoch;
      epoch_sum = 0;
      epoch_steps = 0;
    }
    epoch_sum += r.loss;
    ++epoch_steps;
  };
  engine::TrainState state;
  try {
    state = engine::train(task, ds, cfg.net, cfg.train, on_checkpoint, on_step, std::move(resume));
  } catch (const engine::TrainingDiverged& e) {
    throw std::runtime_error("training diverged at step " + std::to_string(e.step()) + ": " + e.what());
  }
  if (epoch_steps) spdlog::info("epoch {} mean loss {:.6g}", epoch_seen, epoch_sum / epoch_steps);
  ctx.output(ckpt_path);

  const auto loss_path = ctx.out("loss");
  Csv csv(loss_path, {"step", "epoch", "loss"});
  for (const auto& r : state.history) csv.row({std::to_string(r.step), std::to_string(r.epoch), num(r.loss)});
  csv.close();
  ctx.output(loss_path);
}

void cmd_sample(RunContext& ctx) {
  auto& cfg = ctx.cfg();
  auto model = load_model(ctx);
  const auto task = cfg.task_spec();
  const auto chosen = choose_problem(cfg, task, cfg.sample_n_obs);
  const std::vector<engine::Problem> one{chosen.problem};
  const auto ens =
      engine::sample_posterior(model.params, model.net, task, chosen.n_obs, one, cfg.sampler, chosen.offset).front();

  const auto path = ctx.out("ensemble");
  Csv csv(path, coord_header("member", "m_", ens.dim_m));
  for (std::size_t j = 0; j < ens.members(); ++j) {
    std::vector<std::string> row{std::to_string(j)};
    for (std::size_t k = 0; k < ens.dim_m; ++k) row.push_back(num(ens.samples[j * ens.dim_m + k]));
    csv.row(row);
  }
  csv.close();
  ctx.output(path);
  if (!chosen.m_true.empty()) {
    spdlog::info("trial {} N={}: relative error {:.4f}%", cfg.sample_trial, chosen.n_obs,
                 100.0 * eval::relative_error_de(task, chosen.m_true, ens));
  }
}

void cmd_evaluate(RunContext& ctx) {
  auto& cfg = ctx.cfg();
  auto model = load_model(ctx);
  const auto task = cfg.task_spec();

  eval::SweepConfig sweep{cfg.eval_n_list, cfg.eval_trials, cfg.sampler, cfg.seed};
  const auto report = eval::evaluate_sweep(model.params, model.net, task, sweep);
  for (const auto& row : report.rows) {
    spdlog::info("N={}: error {:.4f}% +- {:.4f}% over {} trials", row.n_obs, 100 * row.stats.mean, 100 * row.stats.std,
                 row.stats.count);
  }
  const auto table = eval::sweep_table(report);
  const auto table_path = ctx.out("table2");
  eval::write_sweep_csv(table, table_path);
  ctx.output(table_path);

  const auto errors_path = ctx.out("errors");
  Csv errors(errors_path, {"N", "trial", "error_pct"});
  for (const auto& row : report.rows) {
    for (std::size_t i = 0; i < row.errors.size(); ++i) {
      errors.row({std::to_string(row.n_obs), std::to_string(i), num(100 * row.errors[i])});
    }
  }
  errors.close();
  ctx.output(errors_path);

  if (cfg.eval_generation) {
    eval::GenerationConfig gen{cfg.gen_inferences, cfg.gen_block, cfg.sample_n_obs, cfg.sampler, cfg.seed};
    const auto g = eval::generation_error(model.params, model.net, task, gen);
    spdlog::info("generation error {:.3e} +- {:.3e} over {} blocks", g.blocks.mean, g.blocks.std, g.blocks.count);
    const auto path = ctx.out("generation");
    Csv csv(path, {"metric", "value"});
    csv.row({"block_mean", num(g.blocks.mean)});
    csv.row({"block_std", num(g.blocks.std)});
    csv.row({"blocks", std::to_string(g.blocks.count)});
    csv.row({"per_inference_mean", num(g.per_inference.mean)});
    csv.row({"per_inference_std", num(g.per_inference.std)});
    csv.row({"per_inference_median", num(g.per_inference_median)});
    csv.close();
    ctx.output(path);
  }

  if (task.id() == models::TaskId::kDarcy && !cfg.eval_n_list.empty()) {
    const auto n = *std::max_element(cfg.eval_n_list.begin(), cfg.eval_n_list.end());
    const auto trial = eval::draw_trials(task, n, 1, cfg.seed, n).front();
    auto sampler = cfg.sampler;
    sampler.ensemble = cfg.field_ensemble;
    const std::vector<engine::Problem> one{trial.problem};
    const auto ens =
        engine::sample_posterior(model.params, model.net, task, n, one, sampler, static_cast<std::uint64_t>(n) << 32)
            .front();
    const auto path = ctx.out("field");
    eval::write_field_csv(task, trial.m_true, ens.mean(),
                          std::span<const double>(trial.problem.e).first(task.shared_design_len()), path);
    ctx.output(path);
  }
}

void cmd_mcmc(RunContext& ctx) {
  auto& cfg = ctx.cfg();
  const auto task = cfg.task_spec();
  std::vector<eval::McmcTableRow> rows;
  for (std::size_t n : cfg.mcmc_n_list) {
    // Same trials as evaluate draws for this N.
    const auto trials = eval::draw_trials(task, n, cfg.mcmc_trials, cfg.seed, n);
    std::vector<double> errors;
    for (std::size_t i = 0; i < trials.size(); ++i) {
      auto chain = cfg.chain;
      chain.seed = derive_seed(cfg.seed, Stream::kChain, {n, i});
      chain.record_trace = (i == 0);
      const auto& t = trials[i];
      const auto res = mcmc::run_chain(task, t.problem.d, t.problem.e, chain);
      for (const auto& w : res.warnings) spdlog::warn("N={} trial {}: {}", n, i, w);
      const double err = eval::relative_error_de(task, t.m_true, res.mean,
                                                 std::span<const double>(t.problem.e).first(task.shared_design_len()));
      errors.push_back(err);
      spdlog::info("N={} trial {}: acceptance {:.3f}, error {:.4f}%, {:.1f}s", n, i, res.acceptance, 100 * err,
                   res.seconds);
      if (i == 0) {
        const auto path = ctx.out("chain_N" + std::to_string(n));
        mcmc::write_chain_csv(res, path);
        ctx.output(path);
      }
    }
    rows.push_back({n, cfg.chain.n_samples, 100.0 * eval::summarize(errors).mean});
  }
  const auto path = ctx.out("table3");
  eval::write_mcmc_csv(rows, path);
  ctx.output(path);
}

void cmd_benchmark(RunContext& ctx) {
  auto& cfg = ctx.cfg();
  auto model = load_model(ctx);
  const auto task = cfg.task_spec();
  auto chain = cfg.chain;
  chain.n_samples = cfg.bench_chain_samples;
  const auto r = eval::benchmark_timing(model.params, model.net, task, cfg.bench_n_obs, cfg.sampler, chain, cfg.seed);
  spdlog::info("cfm {:.3f}s, mcmc {:.3f}s, ratio {:.1f}", r.cfm_seconds, r.mcmc_seconds, r.ratio);
  const auto path = ctx.out("timing");
  Csv csv(path, {"N", "ensemble", "chain_samples", "cfm_seconds", "mcmc_seconds", "ratio"});
  csv.row({std::to_string(cfg.bench_n_obs), std::to_string(cfg.sampler.ensemble), std::to_string(chain.n_samples),
           num(r.cfm_seconds), num(r.mcmc_seconds), num(r.ratio)});
  csv.close();
  ctx.output(path, /*is_volatile=*/true);
}

void cmd_paths(RunContext& ctx) {
  auto& cfg = ctx.cfg();
  auto model = load_model(ctx);
  const auto task = cfg.task_spec();
  const auto chosen = choose_problem(cfg, task, cfg.paths_n_obs);
  auto sampler = cfg.sampler;
  sampler.steps = cfg.paths_steps;
  const auto rep =
      engine::network_straightness(model.params, model.net, task, chosen.n_obs, chosen.problem, cfg.paths_probes, sampler);
  spdlog::info("mean straightness deviation {:.4f} over {} paths ({} skipped)", rep.mean_deviation,
               rep.deviations.size(), rep.skipped);
  const auto paths_path = ctx.out("paths");
  engine::write_paths_csv(rep, paths_path);
  ctx.output(paths_path);

  const auto summary_path = ctx.out("straightness");
  Csv csv(summary_path, {"metric", "value"});
  const double worst = rep.deviations.empty() ? 0.0 : *std::max_element(rep.deviations.begin(), rep.deviations.end());
  csv.row({"mean_deviation", num(rep.mean_deviation)});
  csv.row({"max_deviation", num(worst)});
  csv.row({"paths", std::to_string(rep.deviations.size())});
  csv.row({"skipped", std::to_string(rep.skipped)});
  csv.close();
  ctx.output(summary_path);
}

using CommandFn = void (*)(RunContext&);

const std::map<std::string, std::pair<CommandFn, std::string>>& command_table() {
  static const std::map<std::string, std::pair<CommandFn, std::string>> table{
      {"generate-data", {cmd_generate_data, "simulate the training dataset"}},
      {"train", {cmd_train, "train the velocity network"}},
      {"sample", {cmd_sample, "draw a posterior ensemble for one problem"}},
      {"evaluate", {cmd_evaluate, "error sweep over observation counts"}},
      {"mcmc", {cmd_mcmc, "Metropolis-Hastings baseline chains"}},
      {"benchmark", {cmd_benchmark, "wall clock of CFM inference against one chain"}},
      {"paths", {cmd_paths, "sampling trajectories and their straightness"}},
  };
  return table;
}

std::vector<std::pair<std::string, std::string>> gather_assignments(const std::string& config_file,
                                                                    const std::vector<std::string>& sets) {
  std::vector<std::pair<std::string, std::string>> out;
  if (!config_file.empty()) out = parse_config_file(config_file);
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("--set expects key=value, got '" + s + "'");
    out.emplace_back(s.substr(0, eq), s.substr(eq + 1));
  }
  return out;
}

}  // namespace

const std::vector<std::string>& pipeline_commands() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> v;
    for (const auto& [name, entry] : command_table()) v.push_back(name);
    return v;
  }();
  return names;
}

fs::path manifest_path(const fs::path& out_dir, const std::string& command, models::TaskId task) {
  return out_dir / (command + "_" + std::string(models::task_name(task)) + ".manifest.json");
}

Manifest run_command(const std::string& command, RunConfig cfg) {
  const auto it = command_table().find(command);
  if (it == command_table().end()) throw UsageError("unknown subcommand '" + command + "'");
  RunContext ctx(command, std::move(cfg));
  it->second.first(ctx);
  return ctx.finish();
}

ReplayResult replay(const fs::path& manifest_file, const fs::path& out_dir) {
  const auto recorded = read_manifest(manifest_file);
  for (const auto& [path, hash] : recorded.inputs) {
    if (!fs::is_regular_file(path)) throw std::runtime_error("replay input missing: " + path);
    if (file_sha1(path) != hash) throw std::runtime_error("replay input changed since the run: " + path);
  }
  std::vector<std::pair<std::string, std::string>> assignments(recorded.config.begin(), recorded.config.end());
  for (auto& [key, value] : assignments) {
    if (key == "run.out_dir") value = fs::absolute(out_dir).lexically_normal().string();
  }
  ReplayResult result;
  result.manifest = run_command(recorded.command, build_config(assignments));
  for (const auto& [key, hash] : recorded.outputs) {
    if (std::find(recorded.volatile_outputs.begin(), recorded.volatile_outputs.end(), key) !=
        recorded.volatile_outputs.end()) {
      continue;
    }
    const auto it = result.manifest.outputs.find(key);
    (it != result.manifest.outputs.end() && it->second == hash ? result.matched : result.mismatched).push_back(key);
  }
  return result;
}

int run_cli(int argc, const char* const* argv) {
  static const auto logger = [] {
    auto l = spdlog::stderr_color_mt("cfm");
    l->set_pattern("[%H:%M:%S.%e] [%^%l%$] %v");
    spdlog::set_default_logger(l);
    return l;
  }();

  CLI::App app{"Conditional flow matching for Bayesian inverse problems", "cfm"};
  app.require_subcommand(0, 1);
  app.fallthrough();
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));
  bool list_keys = false;
  app.add_flag("--list-keys", list_keys, "print every configuration key with its default");

  std::string config_file;
  std::vector<std::string> sets;
  std::string seed;
  std::string out_dir_flag;
  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, entry] : command_table()) {
    auto* sub = app.add_subcommand(name, entry.second);
    sub->add_option("--config", config_file, "flat key = value configuration file");
    sub->add_option("--set", sets, "override one key, key=value (repeatable)");
    sub->add_option("--seed", seed, "master seed (overrides run.seed)");
    sub->add_option("--out-dir", out_dir_flag, "output directory (overrides run.out_dir)");
    subs[name] = sub;
  }
  std::string replay_manifest, replay_out;
  auto* replay_cmd = app.add_subcommand("replay", "rerun a manifest and compare output hashes");
  replay_cmd->add_option("manifest", replay_manifest, "manifest written by an earlier run")->required();
  replay_cmd->add_option("--out-dir", replay_out, "where the rerun writes (default: <manifest dir>/replay)");

  if (argc <= 1) {
    std::cout << app.help();
    return kExitUsage;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }
  spdlog::set_level(spdlog::level::from_str(log_level));

  if (list_keys) {
    std::cout << describe_keys();
    return kExitOk;
  }
  try {
    if (replay_cmd->parsed()) {
      const fs::path target =
          replay_out.empty() ? fs::absolute(replay_manifest).parent_path() / "replay" : fs::path(replay_out);
      const auto r = replay(replay_manifest, target);
      for (const auto& k : r.matched) std::cout << "match    " << k << '\n';
      for (const auto& k : r.mismatched) std::cout << "MISMATCH " << k << '\n';
      std::cout << (r.ok() ? "replay reproduced all outputs\n" : "replay differs\n");
      return r.ok() ? kExitOk : kExitRuntime;
    }
    const auto chosen = std::find_if(subs.begin(), subs.end(), [](const auto& s) { return s.second->parsed(); });
    if (chosen == subs.end()) {
      std::cout << app.help();
      return kExitUsage;
    }
    auto assignments = gather_assignments(config_file, sets);
    if (!seed.empty()) assignments.emplace_back("run.seed", seed);
    if (!out_dir_flag.empty()) assignments.emplace_back("run.out_dir", out_dir_flag);
    const auto cfg = build_config(assignments);
    run_command(chosen->first, cfg);
    return kExitOk;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitRuntime;
  }
}

}  // namespace cfm::app
