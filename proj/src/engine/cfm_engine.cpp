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

#include "cfm/cfm_engine.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>
#include <string>

#include "cfm/rng.hpp"

namespace cfm::engine {

std::vector<double> interpolate(std::span<const double> m0, std::span<const double> m1, double t) {
  if (m0.size() != m1.size()) {
    throw std::invalid_argument("interpolate: endpoint sizes " + std::to_string(m0.size()) + " and " +
                                std::to_string(m1.size()) + " differ");
  }
  if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("interpolate: t outside [0, 1]");
  std::vector<double> out(m0.size());
  // Written so that t = 0 and t = 1 reproduce the endpoints exactly.
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (1.0 - t) * m0[i] + t * m1[i];
  return out;
}

std::string_view schedule_name(LrSchedule s) { return s == LrSchedule::kCosine ? "cosine" : "constant"; }

LrSchedule parse_schedule(std::string_view name) {
  if (name == "constant") return LrSchedule::kConstant;
  if (name == "cosine") return LrSchedule::kCosine;
  throw std::invalid_argument("unknown learning-rate schedule '" + std::string(name) + "'");
}

void TrainConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw std::invalid_argument("train: learning rate must be >= 0");
  if (epochs < 0) throw std::invalid_argument("train: epochs must be >= 0");
  if (batch_size == 0) throw std::invalid_argument("train: batch size must be >= 1");
  if (accumulate < 1) throw std::invalid_argument("train: accumulation window must be >= 1");
  if (checkpoint_every < 0) throw std::invalid_argument("train: checkpoint cadence must be >= 0");
  if (!(min_lr_fraction >= 0.0 && min_lr_fraction <= 1.0)) {
    throw std::invalid_argument("train: min_lr_fraction must be in [0, 1]");
  }
}

double scheduled_lr(const TrainConfig& cfg, long step, long total) {
  if (cfg.schedule == LrSchedule::kConstant || total <= 1) return cfg.lr;
  const double progress = std::clamp(static_cast<double>(step) / static_cast<double>(total - 1), 0.0, 1.0);
  const double floor = cfg.min_lr_fraction;
  return cfg.lr * (floor + (1.0 - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
}

LossNoise loss_noise(const models::TaskSpec& task, std::span<const std::uint64_t> tuple_ids, std::uint64_t seed,
                     std::uint64_t epoch) {
  const std::size_t dim = task.dim_m();
  LossNoise out;
  out.t.resize(tuple_ids.size());
  out.m0.resize(tuple_ids.size() * dim);
  for (std::size_t b = 0; b < tuple_ids.size(); ++b) {
    Rng rng(derive_seed(seed, Stream::kTrainNoise, {epoch, tuple_ids[b]}));
    out.t[b] = rng.uniform();
    task.sample_prior(rng, std::span<double>(out.m0).subspan(b * dim, dim));
  }
  return out;
}

template <typename Scalar>
ad::Var<Scalar> cfm_loss(ad::Tape<Scalar>& tape, ad::ParameterSet<Scalar>& params, const net::NetConfig& cfg,
                         const data::BatchData& batch, const LossNoise& noise) {
  const auto dim = static_cast<std::size_t>(cfg.dim_m);
  if (batch.m.size() != batch.batch * dim || noise.m0.size() != batch.m.size() || noise.t.size() != batch.batch) {
    throw std::invalid_argument("cfm_loss: batch and noise sizes disagree");
  }
  std::vector<double> m_t(batch.m.size());
  ad::Tensor<Scalar> target(ad::Shape{batch.batch, dim});
  for (std::size_t b = 0; b < batch.batch; ++b) {
    const double t = noise.t[b];
    for (std::size_t k = 0; k < dim; ++k) {
      const double m0 = noise.m0[b * dim + k], m1 = batch.m[b * dim + k];
      m_t[b * dim + k] = (1.0 - t) * m0 + t * m1;
      target[b * dim + k] = static_cast<Scalar>(m1 - m0);
    }
  }
  net::NetInput input{batch.batch, batch.n_obs, m_t, noise.t, batch.d, batch.e};
  auto v = net::forward<Scalar>(tape, params, cfg, input);
  return ad::mse(v, tape.constant(std::move(target)));
}

template ad::Var<float> cfm_loss(ad::Tape<float>&, ad::ParameterSet<float>&, const net::NetConfig&,
                                 const data::BatchData&, const LossNoise&);
template ad::Var<double> cfm_loss(ad::Tape<double>&, ad::ParameterSet<double>&, const net::NetConfig&,
                                  const data::BatchData&, const LossNoise&);

namespace {

long steps_per_epoch(std::size_t batches, int accumulate) {
  return static_cast<long>((batches + static_cast<std::size_t>(accumulate) - 1) / static_cast<std::size_t>(accumulate));
}

}  // namespace

TrainState train(const models::TaskSpec& task, const data::Dataset& ds, const net::NetConfig& net_cfg,
                 const TrainConfig& cfg, const CheckpointFn& on_checkpoint, const ProgressFn& on_step,
                 std::unique_ptr<TrainState> resume) {
  cfg.validate();
  net_cfg.validate();
  if (ds.task != task.id() || net_cfg.task != task.id()) {
    throw std::invalid_argument("train: dataset, network and task refer to different tasks");
  }
  if (static_cast<std::size_t>(net_cfg.dim_m) != task.dim_m()) {
    throw std::invalid_argument("train: network dim_m does not match the task");
  }
  if (ds.tuple_count() == 0) throw std::invalid_argument("train: empty dataset");

  TrainState state;
  if (resume) {
    if (!(resume->net == net_cfg)) throw std::invalid_argument("train: resumed state has a different network");
    state = std::move(*resume);
  } else {
    state.net = net_cfg;
    state.params = net::init_parameters<float>(net_cfg, cfg.seed);
    state.adam = ad::AdamState<float>(state.params, ad::AdamConfig{cfg.lr});
  }

  const std::size_t n_params = state.params.size();
  const long per_epoch = steps_per_epoch(epoch_batches(ds, cfg.batch_size, cfg.seed, 0).size(), cfg.accumulate);
  const long total_steps = per_epoch * cfg.epochs;

  std::vector<std::vector<double>> acc(n_params);
  std::vector<std::vector<float>> grads(n_params);
  for (std::size_t k = 0; k < n_params; ++k) {
    acc[k].assign(state.params[k].value.numel(), 0.0);
    grads[k].assign(state.params[k].value.numel(), 0.0f);
  }

  for (int epoch = state.epochs_done; epoch < cfg.epochs; ++epoch) {
    const auto batches = data::epoch_batches(ds, cfg.batch_size, cfg.seed, static_cast<std::uint64_t>(epoch));
    std::size_t window_rows = 0, window_batches = 0;
    double window_loss = 0;

    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const auto batch = data::gather(ds, task, batches[bi]);
      const auto noise = loss_noise(task, batch.tuple_ids, cfg.seed, static_cast<std::uint64_t>(epoch));
      state.params.zero_grad();
      ad::Tape<float> tape;
      auto loss = cfm_loss(tape, state.params, net_cfg, batch, noise);
      const double value = loss.value()[0];
      if (!std::isfinite(value)) {
        // Parameters still hold the result of the last completed step.
        if (on_checkpoint) on_checkpoint(state, CheckpointReason::kDiverged);
        throw TrainingDiverged(state.step + 1, "train: non-finite loss at optimizer step " +
                                                   std::to_string(state.step + 1) + " (epoch " +
                                                   std::to_string(epoch) + ", batch " + std::to_string(bi) + ")");
      }
      tape.backward(loss);
      const auto w = static_cast<double>(batch.batch);
      for (std::size_t k = 0; k < n_params; ++k) {
        const auto& g = state.params[k].grad;
        auto& a = acc[k];
        for (std::size_t i = 0; i < a.size(); ++i) a[i] += w * static_cast<double>(g[i]);
      }
      window_rows += batch.batch;
      window_loss += w * value;
      ++window_batches;

      const bool last = bi + 1 == batches.size();
      if (window_batches == static_cast<std::size_t>(cfg.accumulate) || last) {
        const double inv = 1.0 / static_cast<double>(window_rows);
        for (std::size_t k = 0; k < n_params; ++k) {
          for (std::size_t i = 0; i < acc[k].size(); ++i) {
            grads[k][i] = static_cast<float>(acc[k][i] * inv);
            acc[k][i] = 0.0;
          }
        }
        state.adam.config.lr = scheduled_lr(cfg, state.step, total_steps);
        ad::adam_step<float>(state.params, grads, state.adam);
        ++state.step;
        const LossRecord rec{state.step, epoch, window_loss * inv};
        state.history.push_back(rec);
        if (on_step) on_step(rec);
        window_rows = window_batches = 0;
        window_loss = 0;
      }
    }
    state.epochs_done = epoch + 1;
    if (on_checkpoint && cfg.checkpoint_every > 0 && state.epochs_done % cfg.checkpoint_every == 0 &&
        state.epochs_done != cfg.epochs) {
      on_checkpoint(state, CheckpointReason::kPeriodic);
    }
  }
  if (on_checkpoint) on_checkpoint(state, CheckpointReason::kFinal);
  return state;
}

// ---- sampling ---------------------------------------------------------------

std::string_view integrator_name(Integrator m) {
  switch (m) {
    case Integrator::kEuler:
      return "euler";
    case Integrator::kMidpoint:
      return "midpoint";
    case Integrator::kRk4:
      return "rk4";
  }
  return "?";
}

Integrator parse_integrator(std::string_view name) {
  if (name == "euler") return Integrator::kEuler;
  if (name == "midpoint") return Integrator::kMidpoint;
  if (name == "rk4") return Integrator::kRk4;
  throw std::invalid_argument("unknown integrator '" + std::string(name) + "' (euler, midpoint, rk4)");
}

void SamplerConfig::validate() const {
  if (steps < 1) throw std::invalid_argument("sampler: steps must be >= 1");
  if (ensemble < 1) throw std::invalid_argument("sampler: ensemble must be >= 1");
  if (max_rows < 1) throw std::invalid_argument("sampler: max_rows must be >= 1");
}

void integrate(const VelocityField& field, std::size_t dim, std::vector<double>& x, int steps, Integrator method,
               std::vector<std::vector<double>>* trajectory) {
  if (steps < 1) throw std::invalid_argument("integrate: steps must be >= 1");
  if (dim == 0 || x.size() % dim != 0) throw std::invalid_argument("integrate: state size is not a multiple of dim");
  const std::size_t n = x.size();
  const double h = 1.0 / steps;
  std::vector<double> k1(n), k2, k3, k4, tmp;
  if (method != Integrator::kEuler) {
    k2.resize(n);
    tmp.resize(n);
  }
  if (method == Integrator::kRk4) {
    k3.resize(n);
    k4.resize(n);
  }
  auto axpy = [&](const std::vector<double>& k, double a) {
    for (std::size_t i = 0; i < n; ++i) tmp[i] = x[i] + a * k[i];
  };
  if (trajectory) {
    trajectory->clear();
    trajectory->push_back(x);
  }
  for (int s = 0; s < steps; ++s) {
    const double t = s * h;
    field(t, x, k1);
    switch (method) {
      case Integrator::kEuler:
        for (std::size_t i = 0; i < n; ++i) x[i] += h * k1[i];
        break;
      case Integrator::kMidpoint:
        axpy(k1, 0.5 * h);
        field(t + 0.5 * h, tmp, k2);
        for (std::size_t i = 0; i < n; ++i) x[i] += h * k2[i];
        break;
      case Integrator::kRk4:
        axpy(k1, 0.5 * h);
        field(t + 0.5 * h, tmp, k2);
        axpy(k2, 0.5 * h);
        field(t + 0.5 * h, tmp, k3);
        axpy(k3, h);
        field(std::min(t + h, 1.0), tmp, k4);
        for (std::size_t i = 0; i < n; ++i) x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        break;
    }
    for (double v : x) {
      if (!std::isfinite(v)) {
        throw SamplingError("integrate: non-finite state after step " + std::to_string(s + 1) + " of " +
                            std::to_string(steps));
      }
    }
    if (trajectory) trajectory->push_back(x);
  }
}

std::vector<double> PosteriorEnsemble::mean() const {
  std::vector<double> out(dim_m, 0.0);
  const std::size_t n = members();
  if (n == 0) return out;
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t k = 0; k < dim_m; ++k) out[k] += samples[j * dim_m + k];
  }
  for (double& v : out) v /= static_cast<double>(n);
  return out;
}

VelocityField network_field(ad::ParameterSet<float>& params, const net::NetConfig& cfg, std::size_t n_obs,
                            std::span<const Problem> problems, std::size_t members) {
  const std::size_t rows = problems.size() * members;
  const std::size_t d_len = problems.empty() ? 0 : problems[0].d.size();
  const std::size_t e_len = problems.empty() ? 0 : problems[0].e.size();
  auto d = std::make_shared<std::vector<double>>();
  auto e = std::make_shared<std::vector<double>>();
  d->reserve(rows * d_len);
  e->reserve(rows * e_len);
  for (const auto& p : problems) {
    if (p.d.size() != d_len || p.e.size() != e_len) {
      throw std::invalid_argument("network_field: problems have different observation layouts");
    }
    for (std::size_t j = 0; j < members; ++j) {
      d->insert(d->end(), p.d.begin(), p.d.end());
      e->insert(e->end(), p.e.begin(), p.e.end());
    }
  }
  return [&params, cfg, n_obs, rows, d, e](double t, std::span<const double> x, std::span<double> v) {
    if (x.size() != rows * cfg.dim_m || v.size() != x.size()) {
      throw std::invalid_argument("network_field: state has the wrong number of rows");
    }
    const std::vector<double> times(rows, t);
    ad::Tape<float> tape;
    const auto out = net::forward<float>(tape, params, cfg, net::NetInput{rows, n_obs, x, times, *d, *e});
    const auto& value = out.value();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(value[i]);
  };
}

namespace {

void check_problem(const models::TaskSpec& task, std::size_t n_obs, const Problem& p) {
  if (p.d.size() != task.d_len(n_obs) || p.e.size() != task.e_len(n_obs)) {
    throw std::invalid_argument("sample_posterior: d has " + std::to_string(p.d.size()) + " and e has " +
                                std::to_string(p.e.size()) + " values; expected " +
                                std::to_string(task.d_len(n_obs)) + " and " + std::to_string(task.e_len(n_obs)) +
                                " for " + std::to_string(n_obs) + " observations");
  }
}

void draw_starts(const models::TaskSpec& task, std::uint64_t seed, std::uint64_t problem, std::size_t members,
                 std::span<double> out) {
  const std::size_t dim = task.dim_m();
  for (std::size_t j = 0; j < members; ++j) {
    Rng rng(derive_seed(seed, Stream::kSampler, {problem, j}));
    task.sample_prior(rng, out.subspan(j * dim, dim));
  }
}

}  // namespace

std::vector<PosteriorEnsemble> sample_posterior(ad::ParameterSet<float>& params, const net::NetConfig& cfg,
                                                const models::TaskSpec& task, std::size_t n_obs,
                                                std::span<const Problem> problems, const SamplerConfig& sampler,
                                                std::uint64_t problem_offset) {
  sampler.validate();
  if (cfg.task != task.id() || static_cast<std::size_t>(cfg.dim_m) != task.dim_m()) {
    throw std::invalid_argument("sample_posterior: network does not match the task");
  }
  for (const auto& p : problems) check_problem(task, n_obs, p);

  const std::size_t dim = task.dim_m(), members = sampler.ensemble;
  const std::size_t per_chunk = std::max<std::size_t>(1, sampler.max_rows / members);
  std::vector<PosteriorEnsemble> out;
  out.reserve(problems.size());
  for (std::size_t begin = 0; begin < problems.size(); begin += per_chunk) {
    const std::size_t count = std::min(per_chunk, problems.size() - begin);
    const auto chunk = problems.subspan(begin, count);
    std::vector<double> x(count * members * dim);
    for (std::size_t p = 0; p < count; ++p) {
      draw_starts(task, sampler.seed, problem_offset + begin + p, members,
                  std::span<double>(x).subspan(p * members * dim, members * dim));
    }
    integrate(network_field(params, cfg, n_obs, chunk, members), dim, x, sampler.steps, sampler.method);
    for (std::size_t p = 0; p < count; ++p) {
      PosteriorEnsemble ens;
      ens.dim_m = dim;
      ens.n_obs = n_obs;
      ens.samples.assign(x.begin() + static_cast<std::ptrdiff_t>(p * members * dim),
                         x.begin() + static_cast<std::ptrdiff_t>((p + 1) * members * dim));
      ens.d = chunk[p].d;
      ens.e = chunk[p].e;
      ens.sampler = sampler;
      out.push_back(std::move(ens));
    }
  }
  return out;
}

StraightnessReport path_straightness(const VelocityField& field, std::size_t dim, const std::vector<double>& x0,
                                     int steps, Integrator method) {
  std::vector<double> x = x0;
  std::vector<std::vector<double>> traj;
  integrate(field, dim, x, steps, method, &traj);
  const std::size_t n_paths = x0.size() / dim;

  StraightnessReport report;
  double sum = 0;
  for (std::size_t p = 0; p < n_paths; ++p) {
    const std::size_t off = p * dim;
    double chord = 0;
    for (std::size_t k = 0; k < dim; ++k) {
      const double diff = x[off + k] - x0[off + k];
      chord += diff * diff;
    }
    chord = std::sqrt(chord);
    std::vector<std::vector<double>> path;
    path.reserve(traj.size());
    for (const auto& state : traj) path.emplace_back(state.begin() + static_cast<std::ptrdiff_t>(off),
                                                     state.begin() + static_cast<std::ptrdiff_t>(off + dim));
    report.paths.push_back(std::move(path));
    if (chord < 1e-9) {
      ++report.skipped;
      continue;
    }
    double worst = 0;
    for (std::size_t s = 0; s < traj.size(); ++s) {
      const double t = static_cast<double>(s) / steps;
      double dist = 0;
      for (std::size_t k = 0; k < dim; ++k) {
        const double on_chord = (1.0 - t) * x0[off + k] + t * x[off + k];
        const double diff = traj[s][off + k] - on_chord;
        dist += diff * diff;
      }
      worst = std::max(worst, std::sqrt(dist));
    }
    report.deviations.push_back(worst / chord);
    sum += worst / chord;
  }
  report.mean_deviation = report.deviations.empty() ? 0.0 : sum / static_cast<double>(report.deviations.size());
  return report;
}

StraightnessReport network_straightness(ad::ParameterSet<float>& params, const net::NetConfig& cfg,
                                        const models::TaskSpec& task, std::size_t n_obs, const Problem& problem,
                                        std::size_t probes, const SamplerConfig& sampler) {
  sampler.validate();
  check_problem(task, n_obs, problem);
  if (probes == 0) throw std::invalid_argument("path_straightness: probe count must be >= 1");
  std::vector<double> x0(probes * task.dim_m());
  draw_starts(task, sampler.seed, 0, probes, x0);
  const std::span<const Problem> one(&problem, 1);
  return path_straightness(network_field(params, cfg, n_obs, one, probes), task.dim_m(), x0, sampler.steps,
                           sampler.method);
}

void write_paths_csv(const StraightnessReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.precision(17);
  const std::size_t dim = report.paths.empty() || report.paths[0].empty() ? 0 : report.paths[0][0].size();
  out << "path,step,t";
  for (std::size_t k = 0; k < dim; ++k) out << ",x_" << k;
  out << '\n';
  for (std::size_t p = 0; p < report.paths.size(); ++p) {
    const auto& path_states = report.paths[p];
    const std::size_t steps = path_states.size() - 1;
    for (std::size_t s = 0; s < path_states.size(); ++s) {
      out << p << ',' << s << ',' << static_cast<double>(s) / static_cast<double>(steps);
      for (double v : path_states[s]) out << ',' << v;
      out << '\n';
    }
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace cfm::engine
