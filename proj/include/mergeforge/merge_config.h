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

#ifndef MERGEFORGE_MERGE_CONFIG_H_
#define MERGEFORGE_MERGE_CONFIG_H_

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mergeforge/checkpoint.h"
#include "mergeforge/dtype.h"

namespace mf {

enum class MergeMethod { kTies, kLinear, kSlerp, kDareTies, kDareLinear };

std::string_view MergeMethodName(MergeMethod method);
std::optional<MergeMethod> ParseMergeMethod(std::string_view name);

// One rule of a schedule. A rule without a filter is the default rule.
struct ScheduleRule {
  std::optional<std::string> filter;
  std::vector<double> anchors;

  friend bool operator==(const ScheduleRule&, const ScheduleRule&) = default;
};

// Ordered filter rules, each carrying a list of anchors that is interpolated
// piecewise-linearly over the normalized layer position.
class ParameterSchedule {
 public:
  ParameterSchedule() = default;
  // Throws SchemaError if a rule has no anchors or more than one rule lacks a
  // filter.
  explicit ParameterSchedule(std::vector<ScheduleRule> rules);

  static ParameterSchedule Constant(double value);

  const std::vector<ScheduleRule>& rules() const { return rules_; }

  // First rule (declaration order) whose filter is a substring of `name`,
  // falling back to the default rule. nullptr when nothing applies.
  const ScheduleRule* Match(std::string_view tensor_name) const;

  friend bool operator==(const ParameterSchedule&,
                         const ParameterSchedule&) = default;

 private:
  std::vector<ScheduleRule> rules_;
};

struct ModelEntry {
  std::string model;
  ParameterSchedule weight = ParameterSchedule::Constant(1.0);
  ParameterSchedule density = ParameterSchedule::Constant(1.0);

  friend bool operator==(const ModelEntry&, const ModelEntry&) = default;
};

struct MergeConfig {
  MergeMethod method = MergeMethod::kTies;
  std::optional<std::string> base_model;
  std::vector<ModelEntry> models;
  bool normalize = true;
  bool int8_mask = false;
  DType out_dtype = DType::kF32;
  std::optional<double> t;          // slerp
  std::optional<uint64_t> seed;     // dare_*

  // TIES and DARE variants operate on task vectors relative to base_model.
  bool RequiresBase() const;

  friend bool operator==(const MergeConfig&, const MergeConfig&) = default;
};

// Parses a YAML merge recipe. Scalar parameters become single-anchor default
// schedules. Unknown keys are rejected.
//
//   merge_method: ties
//   base_model: path/or/id
//   models:
//     - model: path/or/id
//       parameters:
//         weight:
//           - filter: mlp
//             value: [0.25, 0.5, 0.5, 0.25]
//           - value: 0.5
//         density: 0.75
//   parameters: {normalize: true, int8_mask: true, t: 0.5, seed: 7}
//   dtype: bfloat16
MergeConfig ParseMergeConfig(std::string_view text);
MergeConfig LoadMergeConfig(const std::filesystem::path& path);
std::string SerializeMergeConfig(const MergeConfig& config);

// Integer after a "layers." path segment, e.g. 12 for
// "model.layers.12.mlp.down_proj.weight".
std::optional<uint32_t> ExtractLayerIndex(std::string_view tensor_name);

// 1 + the largest layer index among `names`; 1 if none is layered.
uint32_t InferLayerCount(const SpecIndex& index);

double InterpolateAnchors(std::span<const double> anchors, double fraction);

// Normalized depth of a tensor: layer_index / (layer_count - 1) for layered
// tensors; 0 for unlayered embeddings; 1 for every other unlayered tensor.
double LayerFraction(std::string_view tensor_name, uint32_t layer_count);

// Picks the applicable rule and interpolates its anchors at the tensor's
// layer fraction. Throws NoApplicableRule.
double ResolveParameter(const ParameterSchedule& schedule,
                        std::string_view tensor_name, uint32_t layer_count);

struct ValidationIssue {
  enum class Kind {
    kMissingTensor,
    kShapeMismatch,
    kNoApplicableRule,
    kModelCountMismatch,
    kDtypeNote,
    kExtraTensor,
  };
  Kind kind;
  std::string tensor;
  int model_index = -1;  // position in MergeConfig::models; -1 for the base
  std::string detail;

  bool structural() const {
    return kind != Kind::kDtypeNote && kind != Kind::kExtraTensor;
  }
};

std::string_view IssueKindName(ValidationIssue::Kind kind);

struct ValidationReport {
  bool ok = true;
  std::vector<ValidationIssue> issues;
};

// `spec_sets` holds the base index first when config.RequiresBase(), then one
// index per model entry. Tensors of the reference (base, else the first
// model) drive the check.
ValidationReport ValidateConfig(const MergeConfig& config,
                                std::span<const SpecIndex> spec_sets);

}  // namespace mf

#endif  // MERGEFORGE_MERGE_CONFIG_H_
