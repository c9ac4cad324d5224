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

// Joint samples (m, e, d) grouped into shards of equal observation count,
// their binary file format and the epoch batch schedule.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "cfm/forward_models.hpp"

namespace cfm::data {

struct DatasetShard {
  std::uint32_t n_obs = 0;
  std::uint64_t count = 0;
  // Row-major, `count` rows each.
  std::vector<float> m, e, d, eta;

  std::span<const float> m_row(std::size_t i, std::size_t dim_m) const { return {m.data() + i * dim_m, dim_m}; }
  std::span<const float> e_row(std::size_t i, std::size_t e_len) const { return {e.data() + i * e_len, e_len}; }
  std::span<const float> d_row(std::size_t i, std::size_t d_len) const { return {d.data() + i * d_len, d_len}; }
  std::span<const float> eta_row(std::size_t i, std::size_t d_len) const {
    return {eta.data() + i * d_len, d_len};
  }
};

struct Dataset {
  models::TaskId task = models::TaskId::kNonlinear;
  std::vector<DatasetShard> shards;

  std::uint64_t tuple_count() const;
};

struct DataGenConfig {
  std::uint64_t tuples_per_n = 1000;
  std::vector<std::uint32_t> n_obs_set{4, 5, 6, 7, 8};
  std::uint64_t seed = 0;
  // Tuple i of every shard shares m (and the Darcy boundary design), so one
  // forward solve serves all observation counts.
  bool share_solves = false;
  // 0 picks the hardware concurrency. Output does not depend on it.
  unsigned threads = 0;
};

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// m ~ prior, e ~ design prior, eta ~ N(0, sigma^2), d = F(m, e) + eta. m and e
// are rounded to float before F is evaluated, so stored rows re-verify.
Dataset generate_dataset(const models::TaskSpec& task, const DataGenConfig& config);

inline constexpr std::uint32_t kDatasetVersion = 1;

void save_dataset(const Dataset& ds, const models::TaskSpec& task, const std::filesystem::path& path);
// Format checks only. Throws io::FormatError with a distinct kind for bad
// magic, version mismatch and truncation.
Dataset load_dataset(const std::filesystem::path& path, const models::TaskSpec& task);

// Recomputes F(m, e) on every `stride`-th tuple of each shard and compares it
// with d - eta; throws io::FormatError(kCorrupt) naming the first mismatch.
// Returns the number of tuples checked.
std::size_t verify_dataset(const Dataset& ds, const models::TaskSpec& task, std::size_t stride = 100);

// |F - (d - eta)| <= kVerifyTolerance * max(1, |F|)
inline constexpr double kVerifyTolerance = 1e-6;

struct BatchRef {
  std::size_t shard = 0;
  std::uint32_t n_obs = 0;
  std::vector<std::uint64_t> rows;
};

// Per epoch: each shard is shuffled with its own (seed, epoch, shard) stream
// and cut into batches, the last one possibly short; batches are then taken
// round-robin across shards in shard order.
std::vector<BatchRef> epoch_batches(const Dataset& ds, std::size_t batch_size, std::uint64_t seed,
                                    std::uint64_t epoch);

struct BatchData {
  std::size_t batch = 0;
  std::uint32_t n_obs = 0;
  std::vector<double> m, e, d;
  // Stable identity of each row: (shard << 40) | row.
  std::vector<std::uint64_t> tuple_ids;
};

BatchData gather(const Dataset& ds, const models::TaskSpec& task, const BatchRef& ref);

}  // namespace cfm::data
