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

#include "cfm/checkpoint.hpp"

#include <set>
#include <string>

#include "cfm/binary_io.hpp"

namespace cfm::app {

using io::FormatError;
using io::FormatErrorKind;

namespace {

void write_net(io::Writer& w, const net::NetConfig& c) {
  w.u8(static_cast<std::uint8_t>(c.arch));
  w.u32(static_cast<std::uint32_t>(c.dim_m));
  w.u32(static_cast<std::uint32_t>(c.n_emb));
  w.u32(static_cast<std::uint32_t>(c.n_head));
  w.u32(static_cast<std::uint32_t>(c.n_layer));
  w.f64(c.rope_base);
  w.u32(static_cast<std::uint32_t>(c.time_freq_dim));
  w.u32(static_cast<std::uint32_t>(c.mlp_width));
  w.u32(static_cast<std::uint32_t>(c.mlp_depth));
  w.u32(static_cast<std::uint32_t>(c.mlp_n_obs));
}

net::NetConfig read_net(io::Reader& r, models::TaskId task) {
  net::NetConfig c;
  c.task = task;
  const auto arch = r.u8();
  if (arch > static_cast<std::uint8_t>(net::Arch::kMlp)) {
    throw FormatError(FormatErrorKind::kCorrupt, r.label() + ": unknown architecture id " + std::to_string(arch));
  }
  c.arch = static_cast<net::Arch>(arch);
  c.dim_m = static_cast<int>(r.u32());
  c.n_emb = static_cast<int>(r.u32());
  c.n_head = static_cast<int>(r.u32());
  c.n_layer = static_cast<int>(r.u32());
  c.rope_base = r.f64();
  c.time_freq_dim = static_cast<int>(r.u32());
  c.mlp_width = static_cast<int>(r.u32());
  c.mlp_depth = static_cast<int>(r.u32());
  c.mlp_n_obs = static_cast<int>(r.u32());
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(FormatErrorKind::kCorrupt, r.label() + ": invalid network config: " + e.what());
  }
  return c;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  const auto& s = ckpt.state;
  io::Writer w;
  w.bytes("CFMT", 4);
  w.u32(kCheckpointVersion);
  w.u8(static_cast<std::uint8_t>(s.net.task));
  write_net(w, s.net);

  std::set<std::string> names;
  w.u32(static_cast<std::uint32_t>(s.params.size()));
  for (const auto& p : s.params) {
    if (!names.insert(p.name).second) throw std::invalid_argument("checkpoint: duplicate parameter name '" + p.name + "'");
    if (p.name.size() > 0xffff) throw std::invalid_argument("checkpoint: parameter name too long");
    w.u16(static_cast<std::uint16_t>(p.name.size()));
    w.bytes(p.name.data(), p.name.size());
    w.u8(static_cast<std::uint8_t>(p.value.rank()));
    for (auto d : p.value.shape) w.u32(static_cast<std::uint32_t>(d));
    w.f32s(p.value.data);
  }

  w.u64(static_cast<std::uint64_t>(s.step));
  w.u32(static_cast<std::uint32_t>(s.epochs_done));
  w.u64(ckpt.rng_seed);

  const auto& a = s.adam;
  w.f64(a.config.lr);
  w.f64(a.config.beta1);
  w.f64(a.config.beta2);
  w.f64(a.config.eps);
  w.u64(static_cast<std::uint64_t>(a.step));
  const bool has_moments = s.params.size() > 0 && a.first_moment.size() == s.params.size();
  w.u8(has_moments ? 1 : 0);
  if (has_moments) {
    for (std::size_t k = 0; k < s.params.size(); ++k) {
      w.f32s(a.first_moment[k]);
      w.f32s(a.second_moment[k]);
    }
  }

  w.u64(s.history.size());
  for (const auto& rec : s.history) {
    w.u64(static_cast<std::uint64_t>(rec.step));
    w.u32(static_cast<std::uint32_t>(rec.epoch));
    w.f64(rec.loss);
  }
  return w.buffer();
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  io::Writer w;
  const auto bytes = encode_checkpoint(ckpt);
  w.bytes(bytes.data(), bytes.size());
  w.save(path);
}

Checkpoint decode_checkpoint(std::vector<std::uint8_t> bytes, const std::string& label) {
  io::Reader r(std::move(bytes), label);
  r.expect_magic("CFMT");
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError(FormatErrorKind::kVersionMismatch, label + ": checkpoint version " + std::to_string(version) +
                                                             ", this build reads version " +
                                                             std::to_string(kCheckpointVersion));
  }
  const auto task_id = r.u8();
  if (task_id > static_cast<std::uint8_t>(models::TaskId::kDarcy)) {
    throw FormatError(FormatErrorKind::kCorrupt, label + ": unknown task id " + std::to_string(task_id));
  }
  Checkpoint ckpt;
  auto& s = ckpt.state;
  s.net = read_net(r, static_cast<models::TaskId>(task_id));

  const auto layout = net::parameter_layout(s.net);
  const auto count = r.u32();
  if (count != layout.size()) {
    throw FormatError(FormatErrorKind::kCorrupt, label + ": " + std::to_string(count) + " parameters, config implies " +
                                                     std::to_string(layout.size()));
  }
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto name_len = r.u16();
    std::string name(name_len, '\0');
    r.bytes(name.data(), name_len);
    const auto rank = r.u8();
    ad::Shape shape(rank);
    for (auto& d : shape) d = r.u32();
    if (name != layout[k].first || shape != layout[k].second) {
      throw FormatError(FormatErrorKind::kCorrupt, label + ": parameter " + std::to_string(k) + " is '" + name + "' " +
                                                       ad::shape_str(shape) + ", expected '" + layout[k].first +
                                                       "' " + ad::shape_str(layout[k].second));
    }
    if (s.params.contains(name)) throw FormatError(FormatErrorKind::kCorrupt, label + ": duplicate parameter " + name);
    auto& p = s.params.add(name, shape);
    r.f32s(p.value.data);
  }

  s.step = static_cast<long>(r.u64());
  s.epochs_done = static_cast<int>(r.u32());
  ckpt.rng_seed = r.u64();

  ad::AdamConfig ac;
  ac.lr = r.f64();
  ac.beta1 = r.f64();
  ac.beta2 = r.f64();
  ac.eps = r.f64();
  s.adam = ad::AdamState<float>(s.params, ac);
  s.adam.step = static_cast<long>(r.u64());
  if (r.u8() != 0) {
    for (std::size_t k = 0; k < s.params.size(); ++k) {
      r.f32s(s.adam.first_moment[k]);
      r.f32s(s.adam.second_moment[k]);
    }
  }

  const auto n_hist = r.u64();
  if (n_hist > r.remaining() / 20) throw FormatError(FormatErrorKind::kTruncated, label + ": truncated loss history");
  s.history.resize(n_hist);
  for (auto& rec : s.history) {
    rec.step = static_cast<long>(r.u64());
    rec.epoch = static_cast<int>(r.u32());
    rec.loss = r.f64();
  }
  if (!r.at_end()) throw FormatError(FormatErrorKind::kCorrupt, label + ": trailing bytes after checkpoint");
  return ckpt;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  auto reader = io::Reader::open(path);
  std::vector<std::uint8_t> bytes(reader.remaining());
  reader.bytes(bytes.data(), bytes.size());
  return decode_checkpoint(std::move(bytes), path.string());
}

}  // namespace cfm::app
