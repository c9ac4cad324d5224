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

#include "cfm/data_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <optional>
#include <thread>

#include "cfm/binary_io.hpp"
#include "cfm/rng.hpp"

namespace cfm::data {

using models::TaskSpec;

std::uint64_t Dataset::tuple_count() const {
  std::uint64_t n = 0;
  for (const auto& s : shards) n += s.count;
  return n;
}

namespace {

void round_to_float(std::span<double> v) {
  for (auto& x : v) x = static_cast<double>(static_cast<float>(x));
}

struct TupleWriter {
  const TaskSpec& task;
  const DataGenConfig& cfg;
  Dataset& ds;

  // Fills row i of every shard.
  void fill(std::uint64_t i) const {
    const std::size_t dm = task.dim_m();
    const std::size_t shared = task.shared_design_len();
    std::vector<double> m(dm), shared_design(shared);
    std::optional<models::SolvedModel> solved;
    for (std::size_t s = 0; s < ds.shards.size(); ++s) {
      auto& shard = ds.shards[s];
      const std::uint32_t n = shard.n_obs;
      const std::uint64_t key = cfg.share_solves ? 0 : n;
      if (!cfg.share_solves || s == 0) {
        Rng prior(derive_seed(cfg.seed, Stream::kData, {key, i, 0}));
        task.sample_prior(prior, m);
        round_to_float(m);
        if (shared > 0) {
          std::vector<double> tmp(task.e_len(0));
          task.sample_design(prior, 0, tmp);
          std::copy(tmp.begin(), tmp.end(), shared_design.begin());
          round_to_float(shared_design);
        }
        try {
          solved = task.solve(m, shared_design);
        } catch (const std::exception& ex) {
          throw GenerationError("forward model failed for tuple " + std::to_string(i) + " (seed " +
                                std::to_string(cfg.seed) + ", n_obs " + std::to_string(n) + "): " + ex.what());
        }
      }
      Rng local(derive_seed(cfg.seed, Stream::kData, {n, i, 1}));
      const std::size_t el = task.e_len(n), dl = task.d_len(n);
      std::vector<double> e(el);
      task.sample_design(local, n, e);
      std::copy(shared_design.begin(), shared_design.end(), e.begin());
      round_to_float(e);
      std::vector<double> d;
      try {
        d = task.observe(*solved, e, n);
      } catch (const std::exception& ex) {
        throw GenerationError("observation failed for tuple " + std::to_string(i) + " (seed " +
                              std::to_string(cfg.seed) + ", n_obs " + std::to_string(n) + "): " + ex.what());
      }
      const double sigma = task.noise_sigma(*solved);
      for (std::size_t k = 0; k < dm; ++k) shard.m[i * dm + k] = static_cast<float>(m[k]);
      for (std::size_t k = 0; k < el; ++k) shard.e[i * el + k] = static_cast<float>(e[k]);
      for (std::size_t k = 0; k < dl; ++k) {
        const float eta = static_cast<float>(sigma * local.normal());
        shard.eta[i * dl + k] = eta;
        shard.d[i * dl + k] = static_cast<float>(d[k] + static_cast<double>(eta));
      }
    }
  }
};

}  // namespace

Dataset generate_dataset(const TaskSpec& task, const DataGenConfig& cfg) {
  if (cfg.tuples_per_n == 0) throw std::invalid_argument("generate_dataset: tuples_per_n must be positive");
  if (cfg.n_obs_set.empty()) throw std::invalid_argument("generate_dataset: empty n_obs set");
  for (auto n : cfg.n_obs_set) {
    if (n == 0) throw std::invalid_argument("generate_dataset: n_obs must be positive");
  }
  Dataset ds;
  ds.task = task.id();
  for (auto n : cfg.n_obs_set) {
    DatasetShard s;
    s.n_obs = n;
    s.count = cfg.tuples_per_n;
    s.m.resize(cfg.tuples_per_n * task.dim_m());
    s.e.resize(cfg.tuples_per_n * task.e_len(n));
    s.d.resize(cfg.tuples_per_n * task.d_len(n));
    s.eta.resize(s.d.size());
    ds.shards.push_back(std::move(s));
  }
  const TupleWriter writer{task, cfg, ds};
  unsigned threads = cfg.threads ? cfg.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::uint64_t>(threads, cfg.tuples_per_n));
  if (threads <= 1) {
    for (std::uint64_t i = 0; i < cfg.tuples_per_n; ++i) writer.fill(i);
    return ds;
  }
  std::mutex error_mutex;
  std::exception_ptr first_error;
  std::uint64_t first_index = UINT64_MAX;
  {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < threads; ++w) {
      pool.emplace_back([&, w] {
        for (std::uint64_t i = w; i < cfg.tuples_per_n; i += threads) {
          try {
            writer.fill(i);
          } catch (...) {
            std::lock_guard lock(error_mutex);
            if (i < first_index) {
              first_index = i;
              first_error = std::current_exception();
            }
            return;
          }
        }
      });
    }
  }
  if (first_error) std::rethrow_exception(first_error);
  return ds;
}

namespace {
constexpr std::string_view kMagic = "CFMD";
}

void save_dataset(const Dataset& ds, const TaskSpec& task, const std::filesystem::path& path) {
  if (ds.task != task.id()) throw std::invalid_argument("save_dataset: dataset and task disagree");
  io::Writer w;
  w.bytes(kMagic.data(), kMagic.size());
  w.u32(kDatasetVersion);
  w.u8(static_cast<std::uint8_t>(ds.task));
  w.u32(static_cast<std::uint32_t>(ds.shards.size()));
  for (const auto& s : ds.shards) {
    if (s.m.size() != s.count * task.dim_m() || s.e.size() != s.count * task.e_len(s.n_obs) ||
        s.d.size() != s.count * task.d_len(s.n_obs) || s.eta.size() != s.d.size()) {
      throw std::invalid_argument("save_dataset: shard arrays do not match n_obs " + std::to_string(s.n_obs));
    }
    w.u32(s.n_obs);
    w.u64(s.count);
    w.f32s(s.m);
    w.f32s(s.e);
    w.f32s(s.d);
    w.f32s(s.eta);
  }
  w.save(path);
}

Dataset load_dataset(const std::filesystem::path& path, const TaskSpec& task) {
  auto r = io::Reader::open(path);
  r.expect_magic(kMagic);
  const auto version = r.u32();
  if (version != kDatasetVersion) {
    throw io::FormatError(io::FormatErrorKind::kVersionMismatch,
                          path.string() + ": dataset version " + std::to_string(version) + ", expected " +
                              std::to_string(kDatasetVersion));
  }
  Dataset ds;
  const auto task_byte = r.u8();
  if (task_byte > 2) {
    throw io::FormatError(io::FormatErrorKind::kCorrupt, path.string() + ": unknown task id " + std::to_string(task_byte));
  }
  ds.task = static_cast<models::TaskId>(task_byte);
  if (ds.task != task.id()) {
    throw std::invalid_argument(path.string() + " holds a " + std::string(models::task_name(ds.task)) +
                                " dataset, expected " + std::string(models::task_name(task.id())));
  }
  const auto n_shards = r.u32();
  for (std::uint32_t k = 0; k < n_shards; ++k) {
    DatasetShard s;
    s.n_obs = r.u32();
    s.count = r.u64();
    if (s.n_obs == 0) throw io::FormatError(io::FormatErrorKind::kCorrupt, path.string() + ": shard with n_obs 0");
    const std::uint64_t row_floats = task.dim_m() + task.e_len(s.n_obs) + 2 * task.d_len(s.n_obs);
    if (s.count > r.remaining() / (4 * row_floats)) {
      throw io::FormatError(io::FormatErrorKind::kTruncated,
                            path.string() + ": truncated (shard " + std::to_string(k) + " claims " +
                                std::to_string(s.count) + " tuples)");
    }
    s.m.resize(s.count * task.dim_m());
    s.e.resize(s.count * task.e_len(s.n_obs));
    s.d.resize(s.count * task.d_len(s.n_obs));
    s.eta.resize(s.d.size());
    r.f32s(s.m);
    r.f32s(s.e);
    r.f32s(s.d);
    r.f32s(s.eta);
    ds.shards.push_back(std::move(s));
  }
  if (!r.at_end()) throw io::FormatError(io::FormatErrorKind::kCorrupt, path.string() + ": trailing bytes");
  return ds;
}

std::size_t verify_dataset(const Dataset& ds, const TaskSpec& task, std::size_t stride) {
  if (stride == 0) throw std::invalid_argument("verify_dataset: stride must be positive");
  std::size_t checked = 0;
  const std::size_t dm = task.dim_m();
  for (std::size_t s = 0; s < ds.shards.size(); ++s) {
    const auto& shard = ds.shards[s];
    const std::size_t el = task.e_len(shard.n_obs), dl = task.d_len(shard.n_obs);
    for (std::uint64_t i = 0; i < shard.count; i += stride) {
      const auto mr = shard.m_row(i, dm);
      const auto er = shard.e_row(i, el);
      const std::vector<double> m(mr.begin(), mr.end()), e(er.begin(), er.end());
      const auto f = task.forward(m, e, shard.n_obs);
      for (std::size_t k = 0; k < dl; ++k) {
        const double clean = static_cast<double>(shard.d[i * dl + k]) - static_cast<double>(shard.eta[i * dl + k]);
        if (!(std::abs(f[k] - clean) <= kVerifyTolerance * std::max(1.0, std::abs(f[k])))) {
          throw io::FormatError(io::FormatErrorKind::kCorrupt,
                                "dataset verification failed: shard " + std::to_string(s) + " tuple " +
                                    std::to_string(i) + " entry " + std::to_string(k) + ": F = " +
                                    std::to_string(f[k]) + ", d - eta = " + std::to_string(clean));
        }
      }
      ++checked;
    }
  }
  return checked;
}

std::vector<BatchRef> epoch_batches(const Dataset& ds, std::size_t batch_size, std::uint64_t seed,
                                    std::uint64_t epoch) {
  if (batch_size == 0) throw std::invalid_argument("epoch_batches: batch size must be positive");
  std::vector<std::vector<BatchRef>> per_shard(ds.shards.size());
  for (std::size_t s = 0; s < ds.shards.size(); ++s) {
    std::vector<std::uint64_t> order(ds.shards[s].count);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(seed, Stream::kShuffle, {epoch, s}));
    // Fisher-Yates with explicit draws: std::shuffle is not portable across
    // standard libraries.
    for (std::size_t k = order.size(); k > 1; --k) {
      const auto j = static_cast<std::size_t>(rng.bits() % k);
      std::swap(order[k - 1], order[j]);
    }
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      BatchRef b;
      b.shard = s;
      b.n_obs = ds.shards[s].n_obs;
      b.rows.assign(order.begin() + static_cast<std::ptrdiff_t>(start),
                    order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + batch_size)));
      per_shard[s].push_back(std::move(b));
    }
  }
  std::vector<BatchRef> out;
  for (std::size_t round = 0;; ++round) {
    bool any = false;
    for (auto& list : per_shard) {
      if (round < list.size()) {
        out.push_back(std::move(list[round]));
        any = true;
      }
    }
    if (!any) break;
  }
  return out;
}

BatchData gather(const Dataset& ds, const TaskSpec& task, const BatchRef& ref) {
  const auto& shard = ds.shards.at(ref.shard);
  const std::size_t dm = task.dim_m(), el = task.e_len(shard.n_obs), dl = task.d_len(shard.n_obs);
  BatchData b;
  b.batch = ref.rows.size();
  b.n_obs = shard.n_obs;
  b.m.reserve(b.batch * dm);
  b.e.reserve(b.batch * el);
  b.d.reserve(b.batch * dl);
  for (auto row : ref.rows) {
    if (row >= shard.count) throw std::out_of_range("gather: row " + std::to_string(row) + " out of range");
    for (float v : shard.m_row(row, dm)) b.m.push_back(v);
    for (float v : shard.e_row(row, el)) b.e.push_back(v);
    for (float v : shard.d_row(row, dl)) b.d.push_back(v);
    b.tuple_ids.push_back((static_cast<std::uint64_t>(ref.shard) << 40) | row);
  }
  return b;
}

}  // namespace cfm::data
