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

// Flow-matching training of the velocity network and posterior sampling by
// integrating dx/dt = v(t, x, d, e) from a prior draw at t = 0 to t = 1.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "cfm/autodiff.hpp"
#include "cfm/data_pipeline.hpp"
#include "cfm/forward_models.hpp"
#include "cfm/velocity_net.hpp"

namespace cfm::engine {

// (1 - t) m0 + t m1
std::vector<double> interpolate(std::span<const double> m0, std::span<const double> m1, double t);

enum class LrSchedule : std::uint8_t { kConstant = 0, kCosine = 1 };

std::string_view schedule_name(LrSchedule s);
LrSchedule parse_schedule(std::string_view name);

struct TrainConfig {
  double lr = 8e-4;
  int epochs = 20;
  std::size_t batch_size = 256;
  int accumulate = 4;          // batches per optimizer step
  int checkpoint_every = 0;    // epochs; 0 = final only
  std::uint64_t seed = 0;
  LrSchedule schedule = LrSchedule::kConstant;
  double min_lr_fraction = 0.1;  // cosine floor

  void validate() const;
};

// Learning rate at optimizer step `step` (0-based) out of `total`.
double scheduled_lr(const TrainConfig& cfg, long step, long total);

struct LossRecord {
  long step = 0;
  int epoch = 0;
  double loss = 0;
};

struct TrainState {
  net::NetConfig net;
  ad::ParameterSet<float> params;
  ad::AdamState<float> adam;
  long step = 0;         // optimizer steps taken
  int epochs_done = 0;
  std::vector<LossRecord> history;
};

enum class CheckpointReason { kPeriodic, kFinal, kDiverged };
using CheckpointFn = std::function<void(const TrainState&, CheckpointReason)>;
using ProgressFn = std::function<void(const LossRecord&)>;

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(long step, const std::string& what) : std::runtime_error(what), step_(step) {}
  long step() const { return step_; }

 private:
  long step_;
};

// Per-element draws for the flow-matching loss; a pure function of
// (seed, epoch, tuple id), so results do not depend on batching.
struct LossNoise {
  std::vector<double> t;   // [batch]
  std::vector<double> m0;  // [batch, dim_m]
};
LossNoise loss_noise(const models::TaskSpec& task, std::span<const std::uint64_t> tuple_ids, std::uint64_t seed,
                     std::uint64_t epoch);

// Mean over batch and components of (v(m_t, t, d, e) - (m1 - m0))^2.
template <typename Scalar>
ad::Var<Scalar> cfm_loss(ad::Tape<Scalar>& tape, ad::ParameterSet<Scalar>& params, const net::NetConfig& cfg,
                         const data::BatchData& batch, const LossNoise& noise);

// Each epoch walks data::epoch_batches; gradients of `accumulate` consecutive
// batches are averaged with batch-size weights before one Adam step, and a
// partial window is flushed at the end of the epoch. With `resume`, training
// continues after resume->epochs_done; checkpoints fall on epoch boundaries
// so a resumed run matches an uninterrupted one bit for bit.
TrainState train(const models::TaskSpec& task, const data::Dataset& ds, const net::NetConfig& net_cfg,
                 const TrainConfig& cfg, const CheckpointFn& on_checkpoint = {}, const ProgressFn& on_step = {},
                 std::unique_ptr<TrainState> resume = nullptr);

// ---- sampling ---------------------------------------------------------------

enum class Integrator : std::uint8_t { kEuler = 0, kMidpoint = 1, kRk4 = 2 };

std::string_view integrator_name(Integrator m);
Integrator parse_integrator(std::string_view name);

struct SamplerConfig {
  int steps = 50;
  Integrator method = Integrator::kEuler;
  std::size_t ensemble = 10;
  std::uint64_t seed = 0;
  std::size_t max_rows = 2048;  // rows per network evaluation

  void validate() const;
};

// v(t, x) for `rows` states stored row-major in x; writes into v.
using VelocityField = std::function<void(double t, std::span<const double> x, std::span<double> v)>;

class SamplingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Integrates every row of x (in place) from t = 0 to 1 with `steps` fixed
// steps. If `trajectory` is set it receives the state after every step,
// starting with the initial one.
void integrate(const VelocityField& field, std::size_t dim, std::vector<double>& x, int steps, Integrator method,
               std::vector<std::vector<double>>* trajectory = nullptr);

struct Problem {
  std::vector<double> d;
  std::vector<double> e;
};

struct PosteriorEnsemble {
  std::size_t dim_m = 0;
  std::size_t n_obs = 0;
  std::vector<double> samples;  // [members, dim_m]
  std::vector<double> d, e;
  SamplerConfig sampler;

  std::size_t members() const { return dim_m ? samples.size() / dim_m : 0; }
  std::vector<double> mean() const;
};

// Velocity field of the network for `rows` states, where row r is
// conditioned on problems[r / members].
VelocityField network_field(ad::ParameterSet<float>& params, const net::NetConfig& cfg, std::size_t n_obs,
                            std::span<const Problem> problems, std::size_t members);

// Member j of problem p starts from the prior draw seeded by
// (sampler.seed, p, j); evaluation is chunked into at most max_rows rows.
std::vector<PosteriorEnsemble> sample_posterior(ad::ParameterSet<float>& params, const net::NetConfig& cfg,
                                                const models::TaskSpec& task, std::size_t n_obs,
                                                std::span<const Problem> problems, const SamplerConfig& sampler,
                                                std::uint64_t problem_offset = 0);

struct StraightnessReport {
  double mean_deviation = 0;
  std::vector<double> deviations;  // per kept path
  std::size_t skipped = 0;         // degenerate chords
  // Per path: states at t_k = k/steps, [steps + 1][dim].
  std::vector<std::vector<std::vector<double>>> paths;
};

// max_k ||x(t_k) - ((1 - t_k) x(0) + t_k x(1))|| / ||x(1) - x(0)||, averaged
// over paths. Paths with a chord shorter than 1e-9 are skipped.
StraightnessReport path_straightness(const VelocityField& field, std::size_t dim, const std::vector<double>& x0,
                                     int steps, Integrator method);

// Straightness of network paths for one problem, from `probes` prior draws
// seeded like sample_posterior members of problem 0.
StraightnessReport network_straightness(ad::ParameterSet<float>& params, const net::NetConfig& cfg,
                                        const models::TaskSpec& task, std::size_t n_obs, const Problem& problem,
                                        std::size_t probes, const SamplerConfig& sampler);

// Columns: path, step, t, x_0 .. x_{dim-1}.
void write_paths_csv(const StraightnessReport& report, const std::filesystem::path& path);

}  // namespace cfm::engine
