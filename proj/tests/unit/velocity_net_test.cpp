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

#include <array>
#include <cmath>
#include <random>

#include "cfm/velocity_net.hpp"
#include "doctest.h"
#include "gradcheck.hpp"

using namespace cfm;
using namespace cfm::net;
using models::TaskId;

namespace {

struct Batch {
  std::size_t batch, n_obs;
  std::vector<double> m, t, d, e;
  NetInput input() const { return {batch, n_obs, m, t, d, e}; }
};

Batch random_batch(const NetConfig& cfg, std::size_t batch, std::size_t n_obs, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::size_t dl = cfg.task == TaskId::kSeir ? 2 * n_obs : n_obs;
  const std::size_t el = cfg.task == TaskId::kDarcy ? 2 + 2 * n_obs : n_obs;
  Batch b{batch, n_obs, {}, {}, {}, {}};
  for (std::size_t i = 0; i < batch * cfg.dim_m; ++i) b.m.push_back(u(rng) - 0.5);
  for (std::size_t i = 0; i < batch; ++i) b.t.push_back(u(rng));
  for (std::size_t i = 0; i < batch * dl; ++i) b.d.push_back(cfg.task == TaskId::kSeir ? 100 * u(rng) : u(rng));
  for (std::size_t i = 0; i < batch * el; ++i) b.e.push_back(cfg.task == TaskId::kSeir ? 1 + 2 * u(rng) : u(rng));
  return b;
}

NetConfig micro(TaskId task, int dim_m) {
  NetConfig c = default_config(task, dim_m);
  c.n_emb = 8;
  c.n_head = 2;
  c.n_layer = 2;
  c.time_freq_dim = 8;
  return c;
}

double loss_value(ad::ParameterSet<double>& params, const NetConfig& cfg, const Batch& b,
                  const std::vector<double>& target) {
  ad::Tape<double> tape;
  auto out = forward(tape, params, cfg, b.input());
  auto tgt = tape.constant(ad::Tensor<double>(out.shape(), target));
  return mse(out, tgt).value()[0];
}

// Worst relative error over parameter tensors between backward and central
// differences of the MSE loss.
double network_gradient_error(const NetConfig& cfg, std::size_t n_obs, std::uint64_t seed) {
  auto params = init_parameters<double>(cfg, seed);
  const auto b = random_batch(cfg, 3, n_obs, seed + 1);
  std::vector<double> target(3 * cfg.dim_m);
  std::mt19937_64 rng(seed + 2);
  std::normal_distribution<double> nd;
  for (auto& v : target) v = nd(rng);

  params.zero_grad();
  {
    ad::Tape<double> tape;
    auto out = forward(tape, params, cfg, b.input());
    auto tgt = tape.constant(ad::Tensor<double>(out.shape(), target));
    tape.backward(mse(out, tgt));
  }
  double worst = 0.0;
  const double h = 1e-5;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    std::vector<double> numeric(p.value.numel());
    for (std::size_t k = 0; k < p.value.numel(); ++k) {
      const double keep = p.value.data[k];
      p.value.data[k] = keep + h;
      const double fp = loss_value(params, cfg, b, target);
      p.value.data[k] = keep - h;
      const double fm = loss_value(params, cfg, b, target);
      p.value.data[k] = keep;
      numeric[k] = (fp - fm) / (2 * h);
    }
    const double err = testing::relative_error(p.grad, numeric, 1e-6);
    if (err >= 1e-4) MESSAGE(p.name << " relative error " << err);
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace

TEST_CASE("config validation and parameter layout") {
  auto c = default_config(TaskId::kSeir, 6);
  CHECK_NOTHROW(c.validate());
  c.n_head = 3;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = default_config(TaskId::kSeir, 6);
  c.n_emb = 12;
  c.n_head = 4;  // head_dim 3 is odd
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);

  auto darcy = default_config(TaskId::kDarcy, 16);
  darcy.n_layer = 4;
  const auto count = parameter_count(darcy);
  CHECK(count == parameter_count(darcy));
  CHECK(init_parameters<float>(darcy, 1).scalar_count() == count);
  MESSAGE("darcy transformer parameters: " << count);

  auto params = init_parameters<float>(darcy, 1);
  CHECK_NOTHROW(check_parameters(darcy, params));
  CHECK_THROWS_AS(check_parameters(default_config(TaskId::kSeir, 6), params), std::invalid_argument);
}

TEST_CASE("init is a pure function of config and seed") {
  const auto c = default_config(TaskId::kSeir, 6);
  const auto a = init_parameters<float>(c, 42), b = init_parameters<float>(c, 42), z = init_parameters<float>(c, 43);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].value.data == b[i].value.data);
  CHECK(a[0].value.data != z[0].value.data);
}

TEST_CASE("timestep features and embedding") {
  const auto f0 = timestep_features(0.0, 8);
  for (int i = 0; i < 4; ++i) {
    CHECK(f0[i] == 0.0);
    CHECK(f0[4 + i] == 1.0);
  }
  CHECK_THROWS_AS(timestep_features(1.5, 8), std::invalid_argument);
  CHECK_THROWS_AS(timestep_features(-0.1, 8), std::invalid_argument);

  const auto cfg = default_config(TaskId::kSeir, 6);
  auto params = init_parameters<float>(cfg, 3);
  for (double t : {0.0, 0.37, 0.999}) {
    const auto a = timestep_embed(params, cfg, t);
    const auto b = timestep_embed(params, cfg, t);
    CHECK(a == b);
    const auto c = timestep_embed(params, cfg, t + 1e-9);
    double diff = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) diff = std::max(diff, std::abs(double(a[i]) - double(c[i])));
    CHECK(diff < 1e-6);
  }
  auto pd = init_parameters<double>(cfg, 3);
  const auto a = timestep_embed(pd, cfg, 0.37), c = timestep_embed(pd, cfg, 0.37 + 1e-9);
  double diff = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) diff = std::max(diff, std::abs(a[i] - c[i]));
  CHECK(diff < 1e-6);
}

TEST_CASE("token layout") {
  auto seir = default_config(TaskId::kSeir, 6);
  std::vector<double> d(8, 50.0), e{1.0, 1.5, 2.0, 2.5};
  auto ts = tokenize(seir, 1, 4, d, e);
  CHECK(ts.n_tokens() == 5);
  CHECK(ts.kinds.back() == TokenKind::kState);
  CHECK(ts.positions.back() == 4);
  CHECK(ts.observation[0] == 1.0);
  CHECK(ts.observation[1] == doctest::Approx(0.5));

  auto darcy = default_config(TaskId::kDarcy, 16);
  std::vector<double> dd(8, 0.1), ed(18, 0.5);
  ts = tokenize(darcy, 1, 8, dd, ed);
  CHECK(ts.n_tokens() == 10);
  CHECK(ts.kinds[8] == TokenKind::kDesign);
  CHECK(ts.design.size() == 2);

  auto nl = default_config(TaskId::kNonlinear, 1);
  ts = tokenize(nl, 1, 1, std::vector<double>{0.3}, std::vector<double>{0.7});
  CHECK(ts.n_tokens() == 2);
  CHECK_THROWS_AS(tokenize(nl, 1, 0, {}, {}), std::invalid_argument);
  CHECK_THROWS_AS(tokenize(nl, 2, 1, std::vector<double>{0.3}, std::vector<double>{0.7}), std::invalid_argument);
}

TEST_CASE("output shape for any observation count") {
  for (auto [task, dim] : {std::pair{TaskId::kNonlinear, 1}, std::pair{TaskId::kSeir, 6}, std::pair{TaskId::kDarcy, 16}}) {
    auto cfg = micro(task, dim);
    auto params = init_parameters<float>(cfg, 5);
    for (std::size_t n : {1u, 4u, 9u, 16u}) {
      const auto b = random_batch(cfg, 2, n, n);
      ad::Tape<float> tape;
      const auto out = forward(tape, params, cfg, b.input());
      CHECK(out.shape() == ad::Shape{2, static_cast<std::size_t>(dim)});
    }
  }
}

TEST_CASE("forward is deterministic") {
  auto cfg = default_config(TaskId::kSeir, 6);
  auto params = init_parameters<float>(cfg, 9);
  const auto b = random_batch(cfg, 4, 6, 2);
  ad::Tape<float> t1, t2;
  CHECK(forward(t1, params, cfg, b.input()).value().data == forward(t2, params, cfg, b.input()).value().data);
}

TEST_CASE("batch rows are independent") {
  auto cfg = micro(TaskId::kSeir, 6);
  auto params = init_parameters<double>(cfg, 4);
  const auto b = random_batch(cfg, 3, 4, 8);
  ad::Tape<double> tape;
  const auto all = forward(tape, params, cfg, b.input()).value().data;
  for (std::size_t r = 0; r < 3; ++r) {
    Batch one{1, 4, {}, {b.t[r]}, {}, {}};
    one.m.assign(b.m.begin() + r * 6, b.m.begin() + (r + 1) * 6);
    one.d.assign(b.d.begin() + r * 8, b.d.begin() + (r + 1) * 8);
    one.e.assign(b.e.begin() + r * 4, b.e.begin() + (r + 1) * 4);
    ad::Tape<double> t1;
    const auto single = forward(t1, params, cfg, one.input()).value().data;
    for (int k = 0; k < 6; ++k) CHECK(single[k] == doctest::Approx(all[r * 6 + k]).epsilon(1e-12));
  }
}

TEST_CASE("micro transformer matches a hand-computed pass") {
  // One layer, one head, width 2, nonlinear task with a single observation.
  NetConfig cfg = default_config(TaskId::kNonlinear, 1);
  cfg.n_emb = 2;
  cfg.n_head = 1;
  cfg.n_layer = 1;
  cfg.time_freq_dim = 2;
  auto params = init_parameters<double>(cfg, 0);
  int counter = 0;
  for (auto& p : params) {
    for (auto& v : p.value.data) v = 0.1 * ((counter++ * 7) % 11) - 0.45;
  }
  auto P = [&](const char* name) { return params.at(name).value.data; };

  const double m = 0.3, t = 0.25, d = 0.8, e = 0.4;
  using V2 = std::array<double, 2>;
  auto lin2 = [](const V2& x, const std::vector<double>& w, const std::vector<double>* b) {
    V2 y{};
    for (int j = 0; j < 2; ++j) y[j] = x[0] * w[0 * 2 + j] + x[1] * w[1 * 2 + j] + (b ? (*b)[j] : 0.0);
    return y;
  };
  auto relu2 = [](double x) { return x > 0 ? x * x : 0.0; };
  auto rms = [](const V2& x, const std::vector<double>& g) {
    const double inv = 1.0 / std::sqrt((x[0] * x[0] + x[1] * x[1]) / 2.0 + 1e-6);
    return V2{x[0] * inv * g[0], x[1] * inv * g[1]};
  };
  auto rot = [](const V2& x, int pos) {
    return V2{x[0] * std::cos(pos) - x[1] * std::sin(pos), x[0] * std::sin(pos) + x[1] * std::cos(pos)};
  };

  const auto b_obs = P("tok.obs.b"), b_state = P("tok.state.b"), b1 = P("time.fc1.b"), b2 = P("time.fc2.b");
  V2 obs = lin2({d, e}, P("tok.obs.w"), &b_obs);
  V2 state{m * P("tok.state.w")[0] + b_state[0], m * P("tok.state.w")[1] + b_state[1]};
  V2 feat{std::sin(1000 * t), std::cos(1000 * t)};
  V2 h1 = lin2(feat, P("time.fc1.w"), &b1);
  h1 = {relu2(h1[0]), relu2(h1[1])};
  const V2 temb = lin2(h1, P("time.fc2.w"), &b2);
  std::array<V2, 2> x{V2{obs[0] + temb[0], obs[1] + temb[1]}, V2{state[0] + temb[0], state[1] + temb[1]}};

  std::array<V2, 2> q, k, v;
  for (int i = 0; i < 2; ++i) {
    const V2 n = rms(x[i], P("block0.norm1"));
    q[i] = rot(lin2(n, P("block0.attn.q.w"), nullptr), i);
    k[i] = rot(lin2(n, P("block0.attn.k.w"), nullptr), i);
    v[i] = lin2(n, P("block0.attn.v.w"), nullptr);
  }
  std::array<V2, 2> x2;
  for (int i = 0; i < 2; ++i) {
    double s[2];
    for (int j = 0; j < 2; ++j) s[j] = (q[i][0] * k[j][0] + q[i][1] * k[j][1]) / std::sqrt(2.0);
    const double mx = std::max(s[0], s[1]);
    const double w0 = std::exp(s[0] - mx), w1 = std::exp(s[1] - mx);
    const V2 mixed{(w0 * v[0][0] + w1 * v[1][0]) / (w0 + w1), (w0 * v[0][1] + w1 * v[1][1]) / (w0 + w1)};
    const V2 o = lin2(mixed, P("block0.attn.o.w"), nullptr);
    x2[i] = {x[i][0] + o[0], x[i][1] + o[1]};
  }
  const auto st = x2[1];
  const V2 n2 = rms(st, P("block0.norm2"));
  const auto w1 = P("block0.mlp.fc1.w"), w2 = P("block0.mlp.fc2.w");
  std::array<double, 8> hid{};
  for (int j = 0; j < 8; ++j) hid[j] = relu2(n2[0] * w1[j] + n2[1] * w1[8 + j]);
  V2 out_tok = st;
  for (int c = 0; c < 2; ++c) {
    for (int j = 0; j < 8; ++j) out_tok[c] += hid[j] * w2[j * 2 + c];
  }
  const V2 fin = rms(out_tok, P("final.norm"));
  const double expected = fin[0] * P("head.w")[0] + fin[1] * P("head.w")[1] + P("head.b")[0];

  const std::vector<double> mv{m}, tv{t}, dv{d}, ev{e};
  ad::Tape<double> tape;
  const auto out = forward(tape, params, cfg, NetInput{1, 1, mv, tv, dv, ev});
  CHECK(out.value()[0] == doctest::Approx(expected).epsilon(1e-10));
  ad::Tape<float> tf;
  auto pf = ad::cast_parameters<float>(params);
  CHECK(forward(tf, pf, cfg, NetInput{1, 1, mv, tv, dv, ev}).value()[0] == doctest::Approx(expected).epsilon(1e-5));
}

TEST_CASE("attention weights are invariant to a global position shift") {
  auto cfg = default_config(TaskId::kSeir, 6);
  auto params = init_parameters<float>(cfg, 12);
  const auto b = random_batch(cfg, 2, 7, 3);
  std::vector<ad::Tensor<float>> base, shifted;
  ad::Tape<float> t1, t2;
  ForwardOptions<float> o1{0, &base}, o2{37, &shifted};
  forward(t1, params, cfg, b.input(), o1);
  forward(t2, params, cfg, b.input(), o2);
  REQUIRE(base.size() == static_cast<std::size_t>(cfg.n_layer));
  double worst = 0.0;
  for (std::size_t l = 0; l < base.size(); ++l) {
    for (std::size_t i = 0; i < base[l].numel(); ++i) {
      worst = std::max(worst, std::abs(double(base[l][i]) - double(shifted[l][i])));
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("transformer gradients match finite differences") {
  CHECK(network_gradient_error(micro(TaskId::kSeir, 6), 3, 21) < 1e-4);
  CHECK(network_gradient_error(micro(TaskId::kDarcy, 4), 2, 22) < 1e-4);
  CHECK(network_gradient_error(micro(TaskId::kNonlinear, 1), 2, 23) < 1e-4);
}

TEST_CASE("mlp variant") {
  auto cfg = default_config(TaskId::kSeir, 6, Arch::kMlp);
  auto params = init_parameters<float>(cfg, 2);
  const auto b = random_batch(cfg, 3, 4, 1);
  {
    ad::Tape<float> tape;
    CHECK(forward(tape, params, cfg, b.input()).shape() == ad::Shape{3, 6});
  }
  for (auto& p : params) std::fill(p.value.data.begin(), p.value.data.end(), 0.0f);
  {
    ad::Tape<float> tape;
    for (float v : forward(tape, params, cfg, b.input()).value().data) CHECK(v == 0.0f);
  }
  const auto wrong = random_batch(cfg, 1, 5, 1);
  ad::Tape<float> tape;
  CHECK_THROWS_AS(forward(tape, params, cfg, wrong.input()), std::invalid_argument);

  auto small = cfg;
  small.mlp_width = 6;
  small.n_emb = 4;
  small.time_freq_dim = 4;
  CHECK(network_gradient_error(small, 4, 31) < 1e-4);
}
