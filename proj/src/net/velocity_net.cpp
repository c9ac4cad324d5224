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

#include "cfm/velocity_net.hpp"

#include <cmath>

#include "cfm/rng.hpp"

namespace cfm::net {

using ad::Shape;
using ad::Tensor;
using ad::Var;
using models::TaskId;

std::string_view arch_name(Arch a) { return a == Arch::kMlp ? "mlp" : "transformer"; }

Arch parse_arch(std::string_view name) {
  if (name == "transformer") return Arch::kTransformer;
  if (name == "mlp") return Arch::kMlp;
  throw std::invalid_argument("unknown architecture '" + std::string(name) + "' (transformer, mlp)");
}

void NetConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("NetConfig: " + msg); };
  if (dim_m < 1) fail("dim_m must be >= 1");
  if (n_emb < 1) fail("n_emb must be >= 1");
  if (time_freq_dim < 2 || time_freq_dim % 2 != 0) fail("time_freq_dim must be even and >= 2");
  if (arch == Arch::kTransformer) {
    if (n_head < 1 || n_emb % n_head != 0) fail("n_emb must be divisible by n_head");
    if (head_dim() % 2 != 0) fail("head_dim = n_emb/n_head must be even");
    if (n_layer < 1) fail("n_layer must be >= 1");
    if (!(rope_base > 1.0)) fail("rope_base must exceed 1");
  } else {
    if (mlp_width < 1 || mlp_depth < 1) fail("mlp width and depth must be >= 1");
    if (mlp_n_obs < 1) fail("mlp_n_obs must be >= 1");
  }
}

bool operator==(const NetConfig& a, const NetConfig& b) {
  return a.arch == b.arch && a.task == b.task && a.dim_m == b.dim_m && a.n_emb == b.n_emb &&
         a.n_head == b.n_head && a.n_layer == b.n_layer && a.rope_base == b.rope_base &&
         a.time_freq_dim == b.time_freq_dim && a.mlp_width == b.mlp_width && a.mlp_depth == b.mlp_depth &&
         a.mlp_n_obs == b.mlp_n_obs;
}

namespace {

std::size_t d_len(TaskId task, std::size_t n_obs) { return task == TaskId::kSeir ? 2 * n_obs : n_obs; }
std::size_t e_len(TaskId task, std::size_t n_obs) { return task == TaskId::kDarcy ? 2 + 2 * n_obs : n_obs; }

std::size_t mlp_input_width(const NetConfig& cfg) {
  const auto n = static_cast<std::size_t>(cfg.mlp_n_obs);
  return static_cast<std::size_t>(cfg.dim_m + cfg.n_emb) + d_len(cfg.task, n) + e_len(cfg.task, n);
}

}  // namespace

std::vector<std::pair<std::string, Shape>> parameter_layout(const NetConfig& cfg) {
  cfg.validate();
  const std::size_t c = cfg.n_emb;
  std::vector<std::pair<std::string, Shape>> out;
  auto linear = [&out](const std::string& name, std::size_t in, std::size_t outw, bool bias) {
    out.emplace_back(name + ".w", Shape{in, outw});
    if (bias) out.emplace_back(name + ".b", Shape{outw});
  };
  linear("time.fc1", cfg.time_freq_dim, c, true);
  linear("time.fc2", c, c, true);
  const std::size_t dm = cfg.dim_m;
  if (cfg.arch == Arch::kMlp) {
    std::size_t in = mlp_input_width(cfg);
    for (int l = 0; l < cfg.mlp_depth; ++l) {
      linear("mlp." + std::to_string(l), in, cfg.mlp_width, true);
      in = cfg.mlp_width;
    }
    linear("head", in, dm, true);
    return out;
  }
  linear("tok.obs", cfg.obs_token_dim(), c, true);
  if (cfg.design_token_dim() > 0) linear("tok.design", cfg.design_token_dim(), c, true);
  linear("tok.state", dm, c, true);
  for (int l = 0; l < cfg.n_layer; ++l) {
    const std::string p = "block" + std::to_string(l);
    out.emplace_back(p + ".norm1", Shape{c});
    linear(p + ".attn.q", c, c, false);
    linear(p + ".attn.k", c, c, false);
    linear(p + ".attn.v", c, c, false);
    linear(p + ".attn.o", c, c, false);
    out.emplace_back(p + ".norm2", Shape{c});
    linear(p + ".mlp.fc1", c, 4 * c, false);
    linear(p + ".mlp.fc2", 4 * c, c, false);
  }
  out.emplace_back("final.norm", Shape{c});
  linear("head", c, dm, true);
  return out;
}

std::size_t parameter_count(const NetConfig& cfg) {
  std::size_t n = 0;
  for (const auto& [name, shape] : parameter_layout(cfg)) n += ad::shape_numel(shape);
  return n;
}

template <typename Scalar>
ad::ParameterSet<Scalar> init_parameters(const NetConfig& cfg, std::uint64_t seed) {
  ad::ParameterSet<Scalar> params;
  std::uint64_t index = 0;
  for (const auto& [name, shape] : parameter_layout(cfg)) {
    auto& p = params.add(name, shape);
    Rng rng(derive_seed(seed, Stream::kInit, {index++}));
    const bool is_gain = name.ends_with("norm") || name.ends_with("norm1") || name.ends_with("norm2");
    if (is_gain) {
      for (auto& v : p.value.data) v = Scalar(1);
    } else if (name.ends_with(".w")) {
      const double std_dev = 1.0 / std::sqrt(static_cast<double>(shape[0]));
      for (auto& v : p.value.data) v = static_cast<Scalar>(std_dev * rng.normal());
    }
  }
  return params;
}

template <typename Scalar>
void check_parameters(const NetConfig& cfg, const ad::ParameterSet<Scalar>& params) {
  const auto layout = parameter_layout(cfg);
  if (layout.size() != params.size()) {
    throw std::invalid_argument("parameter set has " + std::to_string(params.size()) + " tensors, config expects " +
                                std::to_string(layout.size()));
  }
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (params[i].name != layout[i].first || params[i].value.shape != layout[i].second) {
      throw std::invalid_argument("parameter " + std::to_string(i) + " is " + params[i].name + " " +
                                  ad::shape_str(params[i].value.shape) + ", config expects " + layout[i].first + " " +
                                  ad::shape_str(layout[i].second));
    }
  }
}

std::vector<double> timestep_features(double t, int dim) {
  if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("timestep " + std::to_string(t) + " outside [0, 1]");
  if (dim < 2 || dim % 2 != 0) throw std::invalid_argument("timestep feature width must be even");
  const int half = dim / 2;
  std::vector<double> f(dim);
  const double s = 1000.0 * t;
  for (int i = 0; i < half; ++i) {
    const double w = std::pow(10000.0, -static_cast<double>(i) / half);
    f[i] = std::sin(w * s);
    f[half + i] = std::cos(w * s);
  }
  return f;
}

TokenSequence tokenize(const NetConfig& cfg, std::size_t batch, std::size_t n_obs, std::span<const double> d,
                       std::span<const double> e) {
  if (n_obs == 0) throw std::invalid_argument("tokenize: empty observation list");
  const std::size_t dl = d_len(cfg.task, n_obs), el = e_len(cfg.task, n_obs);
  if (d.size() != batch * dl || e.size() != batch * el) {
    throw std::invalid_argument("tokenize: d/e lengths do not match " + std::to_string(batch) + " tuples of " +
                                std::to_string(n_obs) + " observations");
  }
  TokenSequence ts;
  ts.batch = batch;
  ts.n_obs = n_obs;
  const std::size_t od = cfg.obs_token_dim();
  ts.observation.resize(batch * n_obs * od);
  for (std::size_t b = 0; b < batch; ++b) {
    const double* db = d.data() + b * dl;
    const double* eb = e.data() + b * el;
    double* out = ts.observation.data() + b * n_obs * od;
    for (std::size_t i = 0; i < n_obs; ++i) {
      double* tok = out + i * od;
      switch (cfg.task) {
        case TaskId::kNonlinear:
          tok[0] = db[i];
          tok[1] = eb[i];
          break;
        case TaskId::kSeir:
          tok[0] = eb[i];
          tok[1] = kSeirObservationScale * db[2 * i];
          tok[2] = kSeirObservationScale * db[2 * i + 1];
          break;
        case TaskId::kDarcy:
          tok[0] = db[i];
          tok[1] = eb[2 + 2 * i];
          tok[2] = eb[3 + 2 * i];
          break;
      }
    }
    if (cfg.task == TaskId::kDarcy) {
      ts.design.push_back(eb[0]);
      ts.design.push_back(eb[1]);
    }
  }
  ts.kinds.assign(n_obs, TokenKind::kObservation);
  if (cfg.design_token_dim() > 0) ts.kinds.push_back(TokenKind::kDesign);
  ts.kinds.push_back(TokenKind::kState);
  ts.positions.resize(ts.kinds.size());
  for (std::size_t i = 0; i < ts.positions.size(); ++i) ts.positions[i] = static_cast<int>(i);
  return ts;
}

namespace {

template <typename Scalar>
Var<Scalar> constant(ad::Tape<Scalar>& tape, Shape shape, std::span<const double> values) {
  std::vector<Scalar> data(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) data[i] = static_cast<Scalar>(values[i]);
  return tape.constant(Tensor<Scalar>(std::move(shape), std::move(data)));
}

template <typename Scalar>
struct Builder {
  ad::Tape<Scalar>& tape;
  ad::ParameterSet<Scalar>& params;

  Var<Scalar> p(const std::string& name) { return tape.param(params.at(name)); }
  Var<Scalar> linear(Var<Scalar> x, const std::string& name) {
    return add_bias(matmul(x, p(name + ".w")), p(name + ".b"));
  }
  Var<Scalar> project(Var<Scalar> x, const std::string& name) { return matmul(x, p(name + ".w")); }
};

constexpr float kNormEps = 1e-6f;

template <typename Scalar>
Var<Scalar> time_embedding(Builder<Scalar>& nb, const NetConfig& cfg, std::span<const double> t) {
  const std::size_t f = cfg.time_freq_dim;
  std::vector<double> feats;
  feats.reserve(t.size() * f);
  for (double ti : t) {
    const auto row = timestep_features(ti, cfg.time_freq_dim);
    feats.insert(feats.end(), row.begin(), row.end());
  }
  auto x = constant(nb.tape, {t.size(), f}, feats);
  return nb.linear(relu_squared(nb.linear(x, "time.fc1")), "time.fc2");
}

template <typename Scalar>
Var<Scalar> forward_mlp(Builder<Scalar>& nb, const NetConfig& cfg, const NetInput& in) {
  if (in.n_obs != static_cast<std::size_t>(cfg.mlp_n_obs)) {
    throw std::invalid_argument("mlp network takes exactly " + std::to_string(cfg.mlp_n_obs) +
                                " observations, got " + std::to_string(in.n_obs));
  }
  const std::size_t b = in.batch;
  const std::size_t dl = d_len(cfg.task, in.n_obs), el = e_len(cfg.task, in.n_obs);
  if (in.d.size() != b * dl || in.e.size() != b * el) throw std::invalid_argument("mlp: d/e length mismatch");
  std::vector<double> d(in.d.begin(), in.d.end());
  if (cfg.task == TaskId::kSeir) {
    for (auto& v : d) v *= kSeirObservationScale;
  }
  const std::vector<Var<Scalar>> parts{constant(nb.tape, {b, static_cast<std::size_t>(cfg.dim_m)}, in.m_t),
                                       time_embedding(nb, cfg, in.t), constant(nb.tape, {b, dl}, d),
                                       constant(nb.tape, {b, el}, in.e)};
  auto x = concat_features<Scalar>(parts);
  for (int l = 0; l < cfg.mlp_depth; ++l) x = relu_squared(nb.linear(x, "mlp." + std::to_string(l)));
  return nb.linear(x, "head");
}

template <typename Scalar>
Var<Scalar> attention(Builder<Scalar>& nb, const NetConfig& cfg, Var<Scalar> h, const std::string& prefix,
                      std::span<const int> positions, const ForwardOptions<Scalar>& options) {
  const std::size_t b = h.shape()[0], t = h.shape()[1];
  const std::size_t heads = cfg.n_head, hd = cfg.head_dim(), c = cfg.n_emb;
  auto split = [&](Var<Scalar> x, bool rotate) {
    auto y = swap_axes_12(reshape(x, {b, t, heads, hd}));
    if (rotate) y = rope(y, positions, cfg.rope_base);
    return reshape(y, {b * heads, t, hd});
  };
  auto q = split(nb.project(h, prefix + ".q"), true);
  auto k = split(nb.project(h, prefix + ".k"), true);
  auto v = split(nb.project(h, prefix + ".v"), false);
  auto scores = scale(batched_matmul(q, k, true), static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(hd))));
  auto weights = softmax_lastdim(scores);
  if (options.attention) options.attention->push_back(weights.value());
  auto mixed = swap_axes_12(reshape(batched_matmul(weights, v, false), {b, heads, t, hd}));
  return nb.project(reshape(mixed, {b, t, c}), prefix + ".o");
}

template <typename Scalar>
Var<Scalar> forward_transformer(Builder<Scalar>& nb, const NetConfig& cfg, const NetInput& in,
                                const ForwardOptions<Scalar>& options) {
  const auto tokens = tokenize(cfg, in.batch, in.n_obs, in.d, in.e);
  const std::size_t b = in.batch, n = in.n_obs;
  std::vector<Var<Scalar>> parts;
  parts.push_back(nb.linear(constant(nb.tape, {b, n, static_cast<std::size_t>(cfg.obs_token_dim())}, tokens.observation),
                            "tok.obs"));
  if (cfg.design_token_dim() > 0) {
    parts.push_back(nb.linear(
        constant(nb.tape, {b, 1, static_cast<std::size_t>(cfg.design_token_dim())}, tokens.design), "tok.design"));
  }
  parts.push_back(nb.linear(constant(nb.tape, {b, 1, static_cast<std::size_t>(cfg.dim_m)}, in.m_t), "tok.state"));
  auto x = add_per_row(concat_tokens<Scalar>(parts), time_embedding(nb, cfg, in.t));

  std::vector<int> positions = tokens.positions;
  for (auto& p : positions) p += options.position_offset;
  for (int l = 0; l < cfg.n_layer; ++l) {
    const std::string p = "block" + std::to_string(l);
    x = add(x, attention(nb, cfg, rms_norm(x, nb.p(p + ".norm1"), static_cast<Scalar>(kNormEps)), p + ".attn",
                         positions, options));
    auto h = rms_norm(x, nb.p(p + ".norm2"), static_cast<Scalar>(kNormEps));
    x = add(x, nb.project(relu_squared(nb.project(h, p + ".mlp.fc1")), p + ".mlp.fc2"));
  }
  x = rms_norm(x, nb.p("final.norm"), static_cast<Scalar>(kNormEps));
  return nb.linear(select_token(x, tokens.n_tokens() - 1), "head");
}

}  // namespace

template <typename Scalar>
Var<Scalar> forward(ad::Tape<Scalar>& tape, ad::ParameterSet<Scalar>& params, const NetConfig& cfg,
                    const NetInput& input, const ForwardOptions<Scalar>& options) {
  if (input.batch == 0) throw std::invalid_argument("forward: empty batch");
  if (input.m_t.size() != input.batch * static_cast<std::size_t>(cfg.dim_m) || input.t.size() != input.batch) {
    throw std::invalid_argument("forward: m_t/t lengths do not match the batch");
  }
  Builder<Scalar> nb{tape, params};
  return cfg.arch == Arch::kMlp ? forward_mlp(nb, cfg, input) : forward_transformer(nb, cfg, input, options);
}

template <typename Scalar>
std::vector<Scalar> timestep_embed(ad::ParameterSet<Scalar>& params, const NetConfig& cfg, double t) {
  ad::Tape<Scalar> tape;
  Builder<Scalar> nb{tape, params};
  const double ts[1] = {t};
  return time_embedding(nb, cfg, ts).value().data;
}

NetConfig default_config(TaskId task, int dim_m, Arch arch) {
  NetConfig c;
  c.arch = arch;
  c.task = task;
  c.dim_m = dim_m;
  switch (task) {
    case TaskId::kNonlinear: c.n_layer = 2; break;
    case TaskId::kSeir: c.n_layer = 6; break;
    case TaskId::kDarcy: c.n_layer = 4; break;
  }
  return c;
}

#define CFM_INSTANTIATE(S)                                                                                  \
  template ad::ParameterSet<S> init_parameters<S>(const NetConfig&, std::uint64_t);                       \
  template void check_parameters<S>(const NetConfig&, const ad::ParameterSet<S>&);                        \
  template Var<S> forward<S>(ad::Tape<S>&, ad::ParameterSet<S>&, const NetConfig&, const NetInput&,        \
                             const ForwardOptions<S>&);                                                    \
  template std::vector<S> timestep_embed<S>(ad::ParameterSet<S>&, const NetConfig&, double);
CFM_INSTANTIATE(float)
CFM_INSTANTIATE(double)
#undef CFM_INSTANTIATE

}  // namespace cfm::net
