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

// Binary checkpoint of a velocity network and its optimizer state.
//
// Layout (little-endian):
//   "CFMT" u32 version u8 task
//   net config: u8 arch u32 dim_m n_emb n_head n_layer f64 rope_base
//               u32 time_freq_dim mlp_width mlp_depth mlp_n_obs
//   u32 n_params, per parameter:
//     u16 name_len, name, u8 rank, u32 dims[rank], f32 data[prod(dims)]
//   u64 step u32 epochs_done u64 rng_seed
//   f64 adam lr beta1 beta2 eps, i64 adam_step, u8 has_moments
//     [per parameter f32 first[numel] f32 second[numel]]
//   u64 n_history, per record: i64 step u32 epoch f64 loss
//
// The training randomness is counter-based on (rng_seed, epoch, tuple), so
// rng_seed with epochs_done is the complete generator state.

#include <cstdint>
#include <filesystem>

#include "cfm/cfm_engine.hpp"

namespace cfm::app {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  engine::TrainState state;
  std::uint64_t rng_seed = 0;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);

// Magic and version are checked before any array is read; parameter names
// and shapes must match the layout implied by the stored config.
Checkpoint decode_checkpoint(std::vector<std::uint8_t> bytes, const std::string& label);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace cfm::app
