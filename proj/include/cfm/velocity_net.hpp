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

// Velocity field v(m_t, t, d, e). The transformer reads one token per
// observation, an optional design token and a trailing state token, with the
// timestep embedding added to every token. The MLP variant flattens a fixed
// number of observations into one input vector.

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "cfm/autodiff.hpp"
#include "cfm/forward_models.hpp"

namespace cfm::net {

enum class Arch : std::uint8_t { kTransformer = 0, kMlp = 1 };

std::string_view arch_name(Arch a);
Arch parse_arch(std::string_view name);

struct NetConfig {
  Arch arch = Arch::kTransformer;
  models::TaskId task = models::TaskId::kNonlinear;
  int dim_m = 1;
  int n_emb = 32;
  int n_head = 4;
  int n_layer = 6;
  double rope_base = 10000.0;
  int time_freq_dim = 64;  // sinusoid features before the embedder MLP
  int mlp_width = 256;
  int mlp_depth = 3;
  int mlp_n_obs = 4;       // the MLP variant accepts exactly this many observations

  int obs_token_dim() const { return task == models::TaskId::kNonlinear ? 2 : 3; }
  int design_token_dim() const { return task == models::TaskId::kDarcy ? 2 : 0; }
  int head_dim() const { return n_emb / n_head; }
  // Throws std::invalid_argument naming the broken invariant.
  void validate() const;
};

bool operator==(const NetConfig& a, const NetConfig& b);

// Shapes of every parameter, in creation order.
std::vector<std::pair<std::string, ad::Shape>> parameter_layout(const NetConfig& cfg);
std::size_t parameter_count(const NetConfig& cfg);

// Weights ~ N(0, 1/fan_in), biases 0, norm gains 1. Each tensor draws from
// its own stream, so the result depends only on (cfg, seed).
template <typename Scalar>
ad::ParameterSet<Scalar> init_parameters(const NetConfig& cfg, std::uint64_t seed);

// Throws std::invalid_argument if names or shapes differ from the layout.
template <typename Scalar>
void check_parameters(const NetConfig& cfg, const ad::ParameterSet<Scalar>& params);

// [sin(w_0 s), ..., sin(w_{h-1} s), cos(w_0 s), ..., cos(w_{h-1} s)] with
// s = 1000 t and w_i = 10^4^(-i/h), h = dim/2. Throws for t outside [0, 1].
std::vector<double> timestep_features(double t, int dim);

enum class TokenKind : std::uint8_t { kObservation, kDesign, kState };

// Raw per-token features for a batch that shares one observation count.
struct TokenSequence {
  std::size_t batch = 0;
  std::size_t n_obs = 0;
  std::vector<double> observation;  // [batch, n_obs, obs_token_dim]
  std::vector<double> design;       // [batch, design_token_dim], may be empty
  std::vector<TokenKind> kinds;
  std::vector<int> positions;       // 0-based, state token last

  std::size_t n_tokens() const { return kinds.size(); }
};

// Population counts are divided by this before entering the network.
inline constexpr double kSeirObservationScale = 0.01;

// d and e hold `batch` tuples back to back in the task layout.
TokenSequence tokenize(const NetConfig& cfg, std::size_t batch, std::size_t n_obs, std::span<const double> d,
                       std::span<const double> e);

struct NetInput {
  std::size_t batch = 0;
  std::size_t n_obs = 0;
  std::span<const double> m_t;  // [batch, dim_m]
  std::span<const double> t;    // [batch]
  std::span<const double> d;    // [batch, d_len(n_obs)]
  std::span<const double> e;    // [batch, e_len(n_obs)]
};

template <typename Scalar>
struct ForwardOptions {
  int position_offset = 0;
  // When set, receives the softmax weights of every layer, [batch*n_head, T, T].
  std::vector<ad::Tensor<Scalar>>* attention = nullptr;
};

// Records the network on `tape`; returns the velocity, [batch, dim_m].
template <typename Scalar>
ad::Var<Scalar> forward(ad::Tape<Scalar>& tape, ad::ParameterSet<Scalar>& params, const NetConfig& cfg,
                        const NetInput& input, const ForwardOptions<Scalar>& options = {});

// Embedder output for a single t, [n_emb].
template <typename Scalar>
std::vector<Scalar> timestep_embed(ad::ParameterSet<Scalar>& params, const NetConfig& cfg, double t);

// Defaults per task (transformer unless `arch` says otherwise).
NetConfig default_config(models::TaskId task, int dim_m, Arch arch = Arch::kTransformer);

}  // namespace cfm::net
