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

// Run manifests: the resolved configuration of one subcommand plus content
// hashes of what it read and wrote, enough to replay and compare the run.

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace cfm::app {

// Hash git gives the same bytes as a blob: SHA-1 of "blob <size>\0" + data.
std::string git_blob_sha1(std::span<const std::uint8_t> data);
std::string file_sha1(const std::filesystem::path& path);

struct Manifest {
  std::string command;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> config;   // every key, resolved
  std::map<std::string, std::string> inputs;   // path -> hash
  std::map<std::string, std::string> outputs;  // path relative to out_dir -> hash
  // Outputs that legitimately differ between runs (wall-clock timings);
  // hashed but excluded from replay comparison.
  std::vector<std::string> volatile_outputs;
  double wall_seconds = 0;  // informational, never compared
};

void write_manifest(const Manifest& m, const std::filesystem::path& path);
Manifest read_manifest(const std::filesystem::path& path);

}  // namespace cfm::app
