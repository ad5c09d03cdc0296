/* Copyright 2026 The MergeForge Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#ifndef MERGEFORGE_CLI_H_
#define MERGEFORGE_CLI_H_

#include <ostream>

namespace mf::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

// Entry point of the `mf` tool. Subcommands: merge, inspect, validate, clean,
// mix, ppl. Settings resolve as flags, then MF_* environment variables, then
// the JSON file named by --settings or MF_SETTINGS.
//
// Returns 0 on success, 1 when inputs fail validation (bad config, schema or
// usage errors) and 2 on runtime failures (I/O, corrupt containers, shape
// mismatches).
int RunCli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace mf::cli

#endif  // MERGEFORGE_CLI_H_
