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

#ifndef MERGEFORGE_MERGE_DRIVER_H_
#define MERGEFORGE_MERGE_DRIVER_H_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mergeforge/checkpoint.h"
#include "mergeforge/merge_config.h"

namespace mf {

struct MergeOptions {
  int workers = 1;
  // Overrides the layer count inferred from the reference checkpoint.
  std::optional<uint32_t> layer_count;
  // Caps concurrent per-tensor working sets; 0 means no cap.
  uint64_t memory_budget_bytes = 0;
};

struct TensorMergeRecord {
  std::string name;
  std::string method;
  std::vector<double> weights;
  std::vector<double> densities;
  std::vector<double> trimmed_fraction;
  double sign_conflict_fraction = 0;
};

struct MergeReport {
  MergeMethod method = MergeMethod::kTies;
  uint64_t tensors_merged = 0;
  uint32_t layer_count = 0;
  int workers = 0;
  uint64_t bytes_written = 0;
  double wall_seconds = 0;
  std::vector<TensorMergeRecord> tensors;  // sorted by name
};

std::string MergeReportToJson(const MergeReport& report);

// Merges every tensor of the reference checkpoint (the base for TIES/DARE,
// otherwise the first model) and writes the result, converted to
// config.out_dtype, to `out_path`. Tensors are merged independently on up to
// options.workers threads; the output index is sorted by name and the bytes
// do not depend on scheduling. On failure no output file is left behind.
//
// `base` may be null when the method does not use one. Throws
// ValidationFailed if ValidateConfig rejects the inputs.
MergeReport MergeCheckpoints(const MergeConfig& config, const ModelSource* base,
                             std::span<const ModelSource> models,
                             const std::filesystem::path& out_path,
                             const MergeOptions& options = {});

// Spec sets in the order ValidateConfig expects.
std::vector<SpecIndex> CollectSpecSets(const MergeConfig& config,
                                       const ModelSource* base,
                                       std::span<const ModelSource> models);

}  // namespace mf

#endif  // MERGEFORGE_MERGE_DRIVER_H_
