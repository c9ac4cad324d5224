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

// Pipeline subcommands and the command-line front end.
//
// Every subcommand writes <out_dir>/<command>_<task>.manifest.json holding
// the resolved configuration, the hashes of the files it read (by absolute
// path) and of the files it wrote (relative to out_dir).

#include <filesystem>
#include <string>
#include <vector>

#include "cfm/manifest.hpp"
#include "cfm/run_config.hpp"

namespace cfm::app {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

// generate-data, train, sample, evaluate, mcmc, benchmark, paths.
const std::vector<std::string>& pipeline_commands();

std::filesystem::path manifest_path(const std::filesystem::path& out_dir, const std::string& command,
                                    models::TaskId task);

// Runs one subcommand in-process and returns its manifest (also written to
// disk). Throws UsageError for bad configuration and other exceptions for
// runtime failures.
Manifest run_command(const std::string& command, RunConfig cfg);

struct ReplayResult {
  Manifest manifest;                    // of the rerun
  std::vector<std::string> matched;     // output keys with equal hashes
  std::vector<std::string> mismatched;  // differing or missing outputs
  bool ok() const { return mismatched.empty(); }
};

// Reruns the manifest's command with its configuration, writing into
// out_dir, after checking that every recorded input still has its hash.
ReplayResult replay(const std::filesystem::path& manifest_file, const std::filesystem::path& out_dir);

// Full command line; returns the process exit code.
int run_cli(int argc, const char* const* argv);

}  // namespace cfm::app
