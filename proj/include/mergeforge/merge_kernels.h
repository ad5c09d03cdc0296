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

#ifndef MERGEFORGE_MERGE_KERNELS_H_
#define MERGEFORGE_MERGE_KERNELS_H_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mergeforge/checkpoint.h"

namespace mf {

// Elementwise difference of a fine-tuned tensor from its base. Deltas are held
// in double: both operands are at most F32, so the subtraction is exact for
// any realistic weight range and base + delta reproduces the model.
struct TaskVector {
  std::string name;
  std::vector<double> delta;
  int source_index = 0;
};

// Throws ShapeMismatch, NonFiniteValue.
TaskVector ComputeTaskVector(const Tensor& model, const Tensor& base,
                             int source_index = 0);

// Keeps the ceil(density * n) largest-magnitude entries and zeroes the rest.
// Equal magnitudes are ranked by lower flat index.
TaskVector TrimByDensity(const TaskVector& tv, double density);

TaskVector ScaleTaskVector(const TaskVector& tv, double weight);

// s[i] = sign(sum_m delta_m[i]); an exact zero sum elects 0.
std::vector<int8_t> ElectSigns(std::span<const TaskVector> weighted_deltas);

// Sums the entries that agree with the elected sign. With `normalize`, the
// sum is divided by the total raw weight of those participants (when that
// total is nonzero).
std::vector<double> DisjointMerge(std::span<const TaskVector> weighted_deltas,
                                  std::span<const double> raw_weights,
                                  std::span<const int8_t> signs, bool normalize);

// Drops each entry independently with probability 1 - density and rescales the
// survivors by 1 / density. The random stream is derived from `seed`, the
// tensor name and the task vector's source index.
TaskVector DareSparsify(const TaskVector& tv, double density, uint64_t seed);

struct KernelStats {
  std::vector<double> trimmed_fraction;  // per model
  double sign_conflict_fraction = 0;
};

// Task vectors -> trim -> weight -> sign election -> disjoint merge -> add to
// base. `int8_mask` selects an 8-bit internal mask representation instead of
// a float one; the result is identical either way. Output is F32.
Tensor TiesMerge(const Tensor& base, std::span<const Tensor> models,
                 std::span<const double> weights,
                 std::span<const double> densities, bool normalize,
                 bool int8_mask, KernelStats* stats = nullptr);

// Throws ShapeMismatch; ZeroWeightSum when normalizing by a zero total.
Tensor LinearMerge(std::span<const Tensor> tensors,
                   std::span<const double> weights, bool normalize);

// Spherical interpolation of the flattened tensors, falling back to linear
// interpolation for (near-)colinear or zero inputs.
Tensor SlerpMerge(const Tensor& a, const Tensor& b, double t);

// DARE-sparsified task vectors combined by TIES election (ties == true) or by
// a weighted sum (ties == false), then added to the base.
Tensor DareMerge(const Tensor& base, std::span<const Tensor> models,
                 std::span<const double> weights,
                 std::span<const double> densities, uint64_t seed, bool ties,
                 bool normalize, bool int8_mask, KernelStats* stats = nullptr);

}  // namespace mf

#endif  // MERGEFORGE_MERGE_KERNELS_H_
