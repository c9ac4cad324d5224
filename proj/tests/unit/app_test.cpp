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

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cfm/binary_io.hpp"
#include "cfm/checkpoint.hpp"
#include "cfm/commands.hpp"
#include "cfm/manifest.hpp"
#include "cfm/run_config.hpp"
#include "doctest.h"

using namespace cfm;
using namespace cfm::app;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("cfm_app_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<std::uint8_t> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "cfm");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

Checkpoint trained_checkpoint() {
  const auto task = models::TaskSpec::nonlinear();
  data::DataGenConfig dg;
  dg.tuples_per_n = 64;
  dg.n_obs_set = {1, 2};
  dg.seed = 3;
  dg.threads = 1;
  const auto ds = data::generate_dataset(task, dg);
  auto net_cfg = net::default_config(models::TaskId::kNonlinear, 1);
  net_cfg.n_emb = 16;
  net_cfg.n_head = 2;
  net_cfg.n_layer = 1;
  net_cfg.time_freq_dim = 8;
  engine::TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 16;
  tc.accumulate = 1;
  tc.seed = 11;
  return {engine::train(task, ds, net_cfg, tc), tc.seed};
}

}  // namespace

TEST_CASE("git blob hashes match git hash-object") {
  CHECK(git_blob_sha1({}) == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
  CHECK(git_blob_sha1(bytes_of("hello\n")) == "ce013625030ba8dba906f756967f9e9ca394464a");
}

TEST_CASE("manifest round trip") {
  const auto dir = fresh_dir("manifest");
  Manifest m;
  m.command = "train";
  m.seed = 42;
  m.config = {{"run.seed", "42"}, {"train.lr", "0.0008"}};
  m.inputs = {{"/abs/dataset.bin", "abc"}};
  m.outputs = {{"loss_seir.csv", "def"}, {"timing_seir.csv", "123"}};
  m.volatile_outputs = {"timing_seir.csv"};
  write_manifest(m, dir / "m.json");
  const auto r = read_manifest(dir / "m.json");
  CHECK(r.command == m.command);
  CHECK(r.seed == m.seed);
  CHECK(r.config == m.config);
  CHECK(r.inputs == m.inputs);
  CHECK(r.outputs == m.outputs);
  CHECK(r.volatile_outputs == m.volatile_outputs);
  CHECK_THROWS(read_manifest(dir / "missing.json"));
}

TEST_CASE("checkpoint round trip is bitwise") {
  const auto ckpt = trained_checkpoint();
  REQUIRE(ckpt.state.adam.first_moment.size() == ckpt.state.params.size());
  const auto bytes = encode_checkpoint(ckpt);
  const auto back = decode_checkpoint(bytes, "mem");
  CHECK(encode_checkpoint(back) == bytes);
  CHECK(back.state.net == ckpt.state.net);
  CHECK(back.state.step == ckpt.state.step);
  CHECK(back.rng_seed == ckpt.rng_seed);
  for (std::size_t k = 0; k < ckpt.state.params.size(); ++k) {
    CHECK(back.state.params[k].value.data == ckpt.state.params[k].value.data);
  }

  SUBCASE("inference from the loaded model equals the in-memory model") {
    const auto task = models::TaskSpec::nonlinear();
    const std::vector<engine::Problem> problems{{{0.3}, {0.7}}, {{-0.2, 0.1}, {0.1, 0.9}}};
    engine::SamplerConfig sc;
    sc.steps = 8;
    sc.ensemble = 4;
    auto a = ckpt.state.params;
    auto b = back.state.params;
    for (std::size_t n : {1u, 2u}) {
      const std::vector<engine::Problem> one{problems[n - 1]};
      const auto ea = engine::sample_posterior(a, ckpt.state.net, task, n, one, sc);
      const auto eb = engine::sample_posterior(b, back.state.net, task, n, one, sc);
      CHECK(ea[0].samples == eb[0].samples);
    }
  }

  SUBCASE("file round trip") {
    const auto dir = fresh_dir("ckpt");
    save_checkpoint(ckpt, dir / "c.bin");
    CHECK(encode_checkpoint(load_checkpoint(dir / "c.bin")) == bytes);
  }
}

TEST_CASE("corrupted checkpoints are rejected with distinct errors") {
  const auto bytes = encode_checkpoint(trained_checkpoint());
  auto kind_of = [](std::vector<std::uint8_t> b) {
    try {
      decode_checkpoint(std::move(b), "mem");
    } catch (const io::FormatError& e) {
      return e.kind();
    }
    FAIL("decode accepted corrupted bytes");
    return io::FormatErrorKind::kIo;
  };
  auto tampered = bytes;
  tampered[4] = 9;  // low byte of the version
  CHECK(kind_of(tampered) == io::FormatErrorKind::kVersionMismatch);
  try {
    decode_checkpoint(tampered, "mem");
  } catch (const io::FormatError& e) {
    const std::string what = e.what();
    CHECK(what.find("version 9") != std::string::npos);
    CHECK(what.find("version " + std::to_string(kCheckpointVersion)) != std::string::npos);
  }
  auto magic = bytes;
  magic[0] = 'X';
  CHECK(kind_of(magic) == io::FormatErrorKind::kBadMagic);
  CHECK(kind_of({bytes.begin(), bytes.end() - 5}) == io::FormatErrorKind::kTruncated);
  auto trailing = bytes;
  trailing.push_back(0);
  CHECK(kind_of(trailing) == io::FormatErrorKind::kCorrupt);
}

TEST_CASE("duplicate parameter names cannot be saved") {
  auto ckpt = trained_checkpoint();
  ckpt.state.params[1].name = ckpt.state.params[0].name;
  CHECK_THROWS_AS(encode_checkpoint(ckpt), std::invalid_argument);
}

TEST_CASE("config text grammar") {
  const auto kv = parse_config_text(
      "# comment\nrun.task = seir\n\n[train]\nlr = 8e-4  \nepochs=3\n[sample]\nmethod = rk4\n", "t.cfg");
  REQUIRE(kv.size() == 4);
  CHECK(kv[1] == std::pair<std::string, std::string>{"train.lr", "8e-4"});
  const auto cfg = build_config(kv);
  CHECK(cfg.task == models::TaskId::kSeir);
  CHECK(cfg.train.lr == 8e-4);
  CHECK(cfg.train.epochs == 3);
  CHECK(cfg.sampler.method == engine::Integrator::kRk4);
  CHECK_THROWS_AS(parse_config_text("lr = 1\n", "t.cfg"), UsageError);
  CHECK_THROWS_AS(parse_config_text("[train]\nno equals sign\n", "t.cfg"), UsageError);
}

TEST_CASE("task defaults, overrides and validation") {
  CHECK(build_config({{"run.task", "darcy"}}).train.lr == 3e-4);
  CHECK(build_config({{"run.task", "darcy"}, {"train.lr", "8e-4"}}).train.lr == 8e-4);
  // The task key decides defaults wherever it appears.
  CHECK(build_config({{"train.epochs", "2"}, {"run.task", "seir"}}).train.epochs == 2);
  const auto seeded = build_config({{"run.seed", "17"}});
  CHECK(seeded.train.seed == 17);
  CHECK(seeded.sampler.seed == 17);
  CHECK(seeded.data.seed == 17);

  try {
    build_config({{"train.learning_rate", "1"}});
    FAIL("unknown key accepted");
  } catch (const UsageError& e) {
    const std::string what = e.what();
    CHECK(what.find("train.learning_rate") != std::string::npos);
    CHECK(what.find("train.lr") != std::string::npos);  // lists valid keys
  }
  CHECK_THROWS_AS(build_config({{"train.lr", "fast"}}), UsageError);
  CHECK_THROWS_AS(build_config({{"train.lr", "-1"}}), UsageError);
  CHECK_THROWS_AS(build_config({{"run.task", "heat"}}), UsageError);
}

TEST_CASE("a config snapshot rebuilds the same config") {
  auto cfg = build_config({{"run.task", "seir"}, {"train.lr", "0.1"}, {"sample.e", "1.5,2.25"},
                           {"mcmc.sigma_obs", "0.3"}, {"mcmc.proposal_scale", "0.01,0.02,0.03,0.04,0.05,0.06"}});
  const auto snap = snapshot(cfg);
  const std::vector<std::pair<std::string, std::string>> kv(snap.begin(), snap.end());
  CHECK(snapshot(build_config(kv)) == snap);
}

TEST_CASE("command line exit codes") {
  const auto dir = fresh_dir("cli");
  CHECK(cli({}) == kExitUsage);
  CHECK(cli({"frobnicate"}) == kExitUsage);
  CHECK(cli({"train", "--set", "nokey=1", "--out-dir", dir.string()}) == kExitUsage);
  CHECK(cli({"train", "--set", "noequals", "--out-dir", dir.string()}) == kExitUsage);
  CHECK(cli({"train", "--config", (dir / "absent.cfg").string()}) == kExitUsage);
  CHECK(cli({"sample", "--out-dir", dir.string()}) == kExitRuntime);
  CHECK(cli({"train", "--out-dir", dir.string()}) == kExitRuntime);  // no dataset yet
}

TEST_CASE("pipeline runs write manifests that replay bitwise") {
  const auto dir = fresh_dir("pipeline");
  {
    std::ofstream cfg(dir / "run.cfg");
    cfg << "[run]\ntask = nonlinear\n[data]\ntuples_per_n = 200\n[net]\nn_emb = 16\nn_head = 2\nn_layer = 1\n"
           "[train]\nepochs = 1\nbatch_size = 32\naccumulate = 1\n[eval]\ntrials = 3\ngen_inferences = 20\n"
           "gen_block = 10\n[paths]\nprobes = 3\nsteps = 10\n[sample]\nsteps = 10\n";
  }
  const std::vector<std::string> common{"--config", (dir / "run.cfg").string(), "--out-dir", (dir / "a").string(),
                                        "--seed", "5"};
  for (const std::string cmd : {"generate-data", "train", "sample", "evaluate", "paths"}) {
    auto args = common;
    args.insert(args.begin(), cmd);
    REQUIRE(cli(args) == kExitOk);
    REQUIRE(fs::exists(manifest_path(dir / "a", cmd, models::TaskId::kNonlinear)));
  }
  const auto train_manifest = read_manifest(manifest_path(dir / "a", "train", models::TaskId::kNonlinear));
  CHECK(train_manifest.seed == 5);
  CHECK(train_manifest.inputs.size() == 1);
  CHECK(train_manifest.outputs.count("checkpoint_nonlinear.bin") == 1);
  CHECK(train_manifest.outputs.count("loss_nonlinear.csv") == 1);

  for (const std::string cmd : {"generate-data", "train", "evaluate", "paths"}) {
    const auto r = replay(manifest_path(dir / "a", cmd, models::TaskId::kNonlinear), dir / ("replay_" + cmd));
    CHECK_MESSAGE(r.ok(), cmd);
    CHECK(!r.matched.empty());
  }

  SUBCASE("a recorded hash that does not match is reported") {
    auto m = read_manifest(manifest_path(dir / "a", "sample", models::TaskId::kNonlinear));
    m.outputs["ensemble_nonlinear.csv"] = std::string(40, '0');
    write_manifest(m, dir / "bad.json");
    CHECK(cli({"replay", (dir / "bad.json").string(), "--out-dir", (dir / "replay_bad").string()}) == kExitRuntime);
  }

  SUBCASE("an input changed since the run is refused") {
    std::ofstream(dir / "a" / "checkpoint_nonlinear.bin", std::ios::app) << 'x';
    CHECK_THROWS(replay(manifest_path(dir / "a", "sample", models::TaskId::kNonlinear), dir / "replay_x"));
  }
}
