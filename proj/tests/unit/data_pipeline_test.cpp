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

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <map>
#include <set>

#include "cfm/binary_io.hpp"
#include "cfm/data_pipeline.hpp"
#include "doctest.h"

using namespace cfm;
using namespace cfm::data;
using models::TaskSpec;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("cfm_data_test_" + name);
}

std::vector<char> file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

bool same_dataset(const Dataset& a, const Dataset& b) {
  if (a.task != b.task || a.shards.size() != b.shards.size()) return false;
  for (std::size_t s = 0; s < a.shards.size(); ++s) {
    const auto &x = a.shards[s], &y = b.shards[s];
    if (x.n_obs != y.n_obs || x.count != y.count || x.m != y.m || x.e != y.e || x.d != y.d || x.eta != y.eta) {
      return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("generation is deterministic and thread-count independent") {
  const auto task = TaskSpec::seir();
  DataGenConfig cfg;
  cfg.tuples_per_n = 40;
  cfg.n_obs_set = {4, 6};
  cfg.seed = 17;
  cfg.threads = 1;
  const auto a = generate_dataset(task, cfg);
  cfg.threads = 3;
  const auto b = generate_dataset(task, cfg);
  CHECK(same_dataset(a, b));
  cfg.seed = 18;
  CHECK_FALSE(same_dataset(a, generate_dataset(task, cfg)));

  REQUIRE(a.shards.size() == 2);
  CHECK(a.shards[1].n_obs == 6);
  CHECK(a.shards[1].e.size() == 40 * 6);
  CHECK(a.shards[1].d.size() == 40 * 12);
}

TEST_CASE("noise-free nonlinear data follows the closed form") {
  models::NoiseConfig quiet;
  quiet.nonlinear = 0.0;
  const auto task = TaskSpec::nonlinear(quiet);
  DataGenConfig cfg;
  cfg.tuples_per_n = 200;
  cfg.n_obs_set = {1, 3};
  const auto ds = generate_dataset(task, cfg);
  for (const auto& s : ds.shards) {
    for (std::uint64_t i = 0; i < s.count; ++i) {
      const double m = s.m[i];
      for (std::uint32_t k = 0; k < s.n_obs; ++k) {
        const double e = s.e[i * s.n_obs + k];
        CHECK(s.d[i * s.n_obs + k] == static_cast<float>(e * e * m * m * m + m * std::exp(-std::abs(0.2 - e))));
        CHECK(s.eta[i * s.n_obs + k] == 0.0f);
      }
    }
  }
}

TEST_CASE("shared solves reuse m across shards") {
  auto basis = std::make_shared<models::KlBasis>(models::kl_basis_build([] {
    models::DarcyConstants c;
    c.nodes_per_side = 17;
    return c;
  }()));
  const auto task = TaskSpec::darcy(basis);
  DataGenConfig cfg;
  cfg.tuples_per_n = 5;
  cfg.n_obs_set = {2, 3};
  cfg.share_solves = true;
  const auto ds = generate_dataset(task, cfg);
  for (std::uint64_t i = 0; i < 5; ++i) {
    for (std::size_t k = 0; k < 16; ++k) CHECK(ds.shards[0].m[i * 16 + k] == ds.shards[1].m[i * 16 + k]);
    CHECK(ds.shards[0].e[i * 6] == ds.shards[1].e[i * 8]);
    CHECK(ds.shards[0].e[i * 6 + 1] == ds.shards[1].e[i * 8 + 1]);
  }
  CHECK(verify_dataset(ds, task, 1) == 10);
}

TEST_CASE("save and load round trip") {
  const auto task = TaskSpec::seir();
  DataGenConfig cfg;
  cfg.tuples_per_n = 25;
  cfg.n_obs_set = {4, 8};
  const auto ds = generate_dataset(task, cfg);
  const auto p1 = temp_file("a.bin"), p2 = temp_file("b.bin");
  save_dataset(ds, task, p1);
  const auto loaded = load_dataset(p1, task);
  CHECK(same_dataset(ds, loaded));
  save_dataset(loaded, task, p2);
  CHECK(file_bytes(p1) == file_bytes(p2));
  CHECK(verify_dataset(loaded, task, 1) == 50);

  const auto bytes = file_bytes(p1);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "CFMD");
  CHECK(bytes[8] == 1);  // task id byte

  Dataset empty;
  empty.task = models::TaskId::kSeir;
  save_dataset(empty, task, p2);
  CHECK(load_dataset(p2, task).shards.empty());
  CHECK(file_bytes(p2).size() == 13);
  std::filesystem::remove(p1);
  std::filesystem::remove(p2);
}

TEST_CASE("load errors are distinct") {
  const auto task = TaskSpec::nonlinear();
  DataGenConfig cfg;
  cfg.tuples_per_n = 10;
  cfg.n_obs_set = {2};
  const auto path = temp_file("err.bin");
  save_dataset(generate_dataset(task, cfg), task, path);
  const auto good = file_bytes(path);
  auto write = [&](std::vector<char> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  };
  auto kind_of = [&]() {
    try {
      load_dataset(path, task);
    } catch (const io::FormatError& e) {
      return e.kind();
    }
    FAIL("expected a format error");
    return io::FormatErrorKind::kIo;
  };

  auto bad = good;
  bad[0] = 'X';
  write(bad);
  CHECK(kind_of() == io::FormatErrorKind::kBadMagic);

  bad = good;
  bad[4] = 9;
  write(bad);
  CHECK(kind_of() == io::FormatErrorKind::kVersionMismatch);

  write(std::vector<char>(good.begin(), good.end() - 7));
  CHECK(kind_of() == io::FormatErrorKind::kTruncated);

  write(good);
  CHECK_THROWS_AS(load_dataset(path, TaskSpec::seir()), std::invalid_argument);
  std::filesystem::remove(path);
}

TEST_CASE("verification catches a tampered tuple") {
  const auto task = TaskSpec::seir();
  DataGenConfig cfg;
  cfg.tuples_per_n = 3;
  cfg.n_obs_set = {4};
  auto ds = generate_dataset(task, cfg);
  ds.shards[0].d[5] += 0.01f;
  CHECK_THROWS_AS(verify_dataset(ds, task, 1), io::FormatError);
}

TEST_CASE("prior statistics") {
  DataGenConfig cfg;
  cfg.tuples_per_n = 10000;
  cfg.n_obs_set = {1};
  const auto ds = generate_dataset(TaskSpec::nonlinear(), cfg);
  double sum = 0, sum2 = 0;
  for (float v : ds.shards[0].m) {
    sum += v;
    sum2 += v * v;
  }
  const double n = 10000, mean = sum / n, var = sum2 / n - mean * mean;
  CHECK(std::abs(mean - 0.5) < 3 * std::sqrt(1.0 / 12 / n));
  // Standard error of the sample variance of U(0,1): sqrt((1/80 - 1/144) / n).
  CHECK(std::abs(var - 1.0 / 12) < 3 * std::sqrt((1.0 / 80 - 1.0 / 144) / n));

  Rng rng(99);
  auto basis = std::make_shared<models::KlBasis>(models::kl_basis_build([] {
    models::DarcyConstants c;
    c.nodes_per_side = 9;
    return c;
  }()));
  const auto darcy = TaskSpec::darcy(basis);
  std::vector<double> m(16);
  double s1 = 0, s2 = 0;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    darcy.sample_prior(rng, m);
    s1 += m[3];
    s2 += m[3] * m[3];
  }
  const double dm = s1 / draws, dv = s2 / draws - dm * dm;
  CHECK(std::abs(dm) < 3 * std::sqrt(1.0 / draws));
  CHECK(std::abs(dv - 1.0) < 3 * std::sqrt(2.0 / draws));
}

TEST_CASE("epoch batches") {
  Dataset ds;
  ds.task = models::TaskId::kNonlinear;
  for (std::uint32_t n : {4u, 8u}) {
    DatasetShard s;
    s.n_obs = n;
    s.count = 100;
    ds.shards.push_back(s);
  }
  const auto batches = epoch_batches(ds, 50, 3, 0);
  REQUIRE(batches.size() == 4);
  CHECK(batches[0].n_obs == 4);
  CHECK(batches[1].n_obs == 8);
  CHECK(batches[2].n_obs == 4);
  CHECK(batches[3].n_obs == 8);

  std::map<std::size_t, std::multiset<std::uint64_t>> seen;
  for (const auto& b : batches) seen[b.shard].insert(b.rows.begin(), b.rows.end());
  for (auto& [shard, rows] : seen) {
    CHECK(rows.size() == 100);
    CHECK(std::set<std::uint64_t>(rows.begin(), rows.end()).size() == 100);
  }

  const auto next = epoch_batches(ds, 50, 3, 1);
  CHECK(next[0].rows != batches[0].rows);
  std::multiset<std::uint64_t> a(batches[0].rows.begin(), batches[0].rows.end());
  a.insert(batches[2].rows.begin(), batches[2].rows.end());
  std::multiset<std::uint64_t> b(next[0].rows.begin(), next[0].rows.end());
  b.insert(next[2].rows.begin(), next[2].rows.end());
  CHECK(a == b);

  ds.shards[1].count = 30;
  const auto uneven = epoch_batches(ds, 40, 3, 0);
  REQUIRE(uneven.size() == 4);
  CHECK(uneven[1].rows.size() == 30);
  CHECK(uneven[2].n_obs == 4);
  CHECK(uneven[3].n_obs == 4);
  CHECK(uneven[3].rows.size() == 20);
  CHECK_THROWS_AS(epoch_batches(ds, 0, 3, 0), std::invalid_argument);
}

TEST_CASE("gather converts rows") {
  const auto task = TaskSpec::seir();
  DataGenConfig cfg;
  cfg.tuples_per_n = 6;
  cfg.n_obs_set = {4};
  const auto ds = generate_dataset(task, cfg);
  const auto b = gather(ds, task, BatchRef{0, 4, {5, 2}});
  CHECK(b.batch == 2);
  CHECK(b.m.size() == 12);
  CHECK(b.d.size() == 16);
  CHECK(b.m[0] == ds.shards[0].m[30]);
  CHECK(b.tuple_ids[1] == 2);
}
