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

#include "mergeforge/merge_kernels.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "mergeforge/error.h"

namespace mf {

namespace {

int Sign(double x) { return (x > 0) - (x < 0); }

void CheckSameShape(const Tensor& a, const Tensor& b) {
  if (a.spec.shape != b.spec.shape) {
    throw Error(ErrorCode::kShapeMismatch,
                a.spec.name + " " + ShapeToString(a.spec.shape) + " vs " +
                    b.spec.name + " " + ShapeToString(b.spec.shape));
  }
}

std::vector<double> FiniteValues(const Tensor& t) {
  const std::vector<float> floats = t.ToFloats();
  std::vector<double> values(floats.begin(), floats.end());
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw Error(ErrorCode::kNonFiniteValue, "tensor '" + t.spec.name + "'");
    }
  }
  return values;
}

Tensor ToTensor(const Tensor& like, std::span<const double> values) {
  std::vector<float> floats(values.begin(), values.end());
  return Tensor::FromFloats(like.spec.name, like.spec.shape, floats);
}

void CheckParallel(size_t models, size_t weights, size_t densities) {
  if (models == 0 || weights != models || densities != models) {
    throw Error(ErrorCode::kShapeMismatch,
                "need one weight and one density per model");
  }
}

size_t KeepCount(double density, size_t n) {
  if (n == 0) return 0;
  if (density >= 1.0) return n;
  // Guard against products such as 0.7 * 10 landing a hair above an integer.
  const double raw = density * static_cast<double>(n);
  const auto k = static_cast<size_t>(std::ceil(raw - 1e-9));
  return std::clamp<size_t>(k, 1, n);
}

// 1 for retained entries, 0 for trimmed ones.
template <typename MaskT>
std::vector<MaskT> TopKMask(const std::vector<double>& delta, double density) {
  const size_t n = delta.size();
  const size_t k = KeepCount(density, n);
  std::vector<MaskT> mask(n, MaskT{0});
  if (k == n) {
    std::fill(mask.begin(), mask.end(), MaskT{1});
    return mask;
  }
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  const auto ranks_before = [&](size_t a, size_t b) {
    const double ma = std::fabs(delta[a]);
    const double mb = std::fabs(delta[b]);
    if (ma != mb) return ma > mb;
    return a < b;
  };
  std::nth_element(order.begin(), order.begin() + static_cast<ptrdiff_t>(k),
                   order.end(), ranks_before);
  for (size_t i = 0; i < k; ++i) mask[order[i]] = MaskT{1};
  return mask;
}

template <typename MaskT>
TaskVector ApplyMask(const TaskVector& tv, const std::vector<MaskT>& mask) {
  TaskVector out = tv;
  for (size_t i = 0; i < out.delta.size(); ++i) {
    if (mask[i] == MaskT{0}) out.delta[i] = 0.0;
  }
  return out;
}

void CheckSameLength(std::span<const TaskVector> deltas) {
  for (const auto& tv : deltas) {
    if (tv.delta.size() != deltas.front().delta.size()) {
      throw Error(ErrorCode::kShapeMismatch,
                  "task vectors differ in length for '" + tv.name + "'");
    }
  }
}

template <typename MaskT>
std::vector<MaskT> ElectSignsAs(std::span<const TaskVector> weighted) {
  if (weighted.empty()) return {};
  CheckSameLength(weighted);
  const size_t n = weighted.front().delta.size();
  std::vector<MaskT> signs(n);
  for (size_t i = 0; i < n; ++i) {
    double sum = 0;
    for (const auto& tv : weighted) sum += tv.delta[i];
    signs[i] = static_cast<MaskT>(Sign(sum));
  }
  return signs;
}

template <typename MaskT>
std::vector<double> DisjointMergeAs(std::span<const TaskVector> weighted,
                                    std::span<const double> raw_weights,
                                    std::span<const MaskT> signs,
                                    bool normalize, size_t* conflicts) {
  if (weighted.empty()) return {};
  CheckSameLength(weighted);
  const size_t n = weighted.front().delta.size();
  if (signs.size() != n || raw_weights.size() != weighted.size()) {
    throw Error(ErrorCode::kShapeMismatch, "sign buffer or weights misaligned");
  }
  std::vector<double> merged(n, 0.0);
  size_t conflicted = 0;
  for (size_t i = 0; i < n; ++i) {
    const int elected = static_cast<int>(signs[i]);
    if (elected == 0) continue;
    double sum = 0;
    double weight_sum = 0;
    bool disagreement = false;
    for (size_t m = 0; m < weighted.size(); ++m) {
      const int s = Sign(weighted[m].delta[i]);
      if (s == elected) {
        sum += weighted[m].delta[i];
        weight_sum += raw_weights[m];
      } else if (s != 0) {
        disagreement = true;
      }
    }
    if (disagreement) ++conflicted;
    merged[i] = normalize && weight_sum != 0.0 ? sum / weight_sum : sum;
  }
  if (conflicts) *conflicts = conflicted;
  return merged;
}

// Shared tail of TIES and DARE-TIES: sparsified task vectors in, merged tensor
// out.
template <typename MaskT>
Tensor CombineBySignElection(const Tensor& base,
                             const std::vector<double>& base_values,
                             const std::vector<TaskVector>& sparse,
                             std::span<const double> weights, bool normalize,
                             KernelStats* stats) {
  std::vector<TaskVector> weighted;
  weighted.reserve(sparse.size());
  for (size_t m = 0; m < sparse.size(); ++m) {
    weighted.push_back(ScaleTaskVector(sparse[m], weights[m]));
  }
  const std::vector<MaskT> signs = ElectSignsAs<MaskT>(weighted);
  size_t conflicts = 0;
  std::vector<double> merged = DisjointMergeAs<MaskT>(
      weighted, weights, std::span<const MaskT>(signs), normalize, &conflicts);
  for (size_t i = 0; i < merged.size(); ++i) merged[i] += base_values[i];
  if (stats) {
    stats->sign_conflict_fraction =
        merged.empty() ? 0.0
                       : static_cast<double>(conflicts) /
                             static_cast<double>(merged.size());
  }
  return ToTensor(base, merged);
}

double ZeroFraction(const TaskVector& before, const TaskVector& after) {
  if (before.delta.empty()) return 0.0;
  size_t dropped = 0;
  for (size_t i = 0; i < before.delta.size(); ++i) {
    if (before.delta[i] != 0.0 && after.delta[i] == 0.0) ++dropped;
  }
  return static_cast<double>(dropped) / static_cast<double>(before.delta.size());
}

template <typename MaskT>
Tensor TiesMergeAs(const Tensor& base, std::span<const Tensor> models,
                   std::span<const double> weights,
                   std::span<const double> densities, bool normalize,
                   KernelStats* stats) {
  const std::vector<double> base_values = FiniteValues(base);
  std::vector<TaskVector> trimmed;
  if (stats) stats->trimmed_fraction.clear();
  for (size_t m = 0; m < models.size(); ++m) {
    const TaskVector tv = ComputeTaskVector(models[m], base, static_cast<int>(m));
    trimmed.push_back(ApplyMask(tv, TopKMask<MaskT>(tv.delta, densities[m])));
    if (stats) stats->trimmed_fraction.push_back(ZeroFraction(tv, trimmed.back()));
  }
  return CombineBySignElection<MaskT>(base, base_values, trimmed, weights,
                                      normalize, stats);
}

uint64_t Fnv1a64(std::string_view text) {
  uint64_t hash = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    hash ^= c;
    hash *= 0x100000001b3ull;
  }
  return hash;
}

}  // namespace

TaskVector ComputeTaskVector(const Tensor& model, const Tensor& base,
                             int source_index) {
  CheckSameShape(model, base);
  const std::vector<double> m = FiniteValues(model);
  const std::vector<double> b = FiniteValues(base);
  TaskVector tv;
  tv.name = base.spec.name;
  tv.source_index = source_index;
  tv.delta.resize(m.size());
  for (size_t i = 0; i < m.size(); ++i) tv.delta[i] = m[i] - b[i];
  return tv;
}

TaskVector TrimByDensity(const TaskVector& tv, double density) {
  return ApplyMask(tv, TopKMask<int8_t>(tv.delta, density));
}

TaskVector ScaleTaskVector(const TaskVector& tv, double weight) {
  TaskVector out = tv;
  for (double& d : out.delta) d *= weight;
  return out;
}

std::vector<int8_t> ElectSigns(std::span<const TaskVector> weighted_deltas) {
  return ElectSignsAs<int8_t>(weighted_deltas);
}

std::vector<double> DisjointMerge(std::span<const TaskVector> weighted_deltas,
                                  std::span<const double> raw_weights,
                                  std::span<const int8_t> signs,
                                  bool normalize) {
  return DisjointMergeAs<int8_t>(weighted_deltas, raw_weights, signs, normalize,
                                 nullptr);
}

TaskVector DareSparsify(const TaskVector& tv, double density, uint64_t seed) {
  if (density >= 1.0) return tv;
  std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32),
                    static_cast<uint32_t>(Fnv1a64(tv.name)),
                    static_cast<uint32_t>(Fnv1a64(tv.name) >> 32),
                    static_cast<uint32_t>(tv.source_index)};
  std::mt19937_64 rng(seq);
  TaskVector out = tv;
  for (double& d : out.delta) {
    // 53 random bits -> uniform in [0, 1).
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    d = u < density ? d / density : 0.0;
  }
  return out;
}

Tensor TiesMerge(const Tensor& base, std::span<const Tensor> models,
                 std::span<const double> weights,
                 std::span<const double> densities, bool normalize,
                 bool int8_mask, KernelStats* stats) {
  CheckParallel(models.size(), weights.size(), densities.size());
  if (int8_mask) {
    return TiesMergeAs<int8_t>(base, models, weights, densities, normalize, stats);
  }
  return TiesMergeAs<float>(base, models, weights, densities, normalize, stats);
}

Tensor DareMerge(const Tensor& base, std::span<const Tensor> models,
                 std::span<const double> weights,
                 std::span<const double> densities, uint64_t seed, bool ties,
                 bool normalize, bool int8_mask, KernelStats* stats) {
  CheckParallel(models.size(), weights.size(), densities.size());
  const std::vector<double> base_values = FiniteValues(base);
  std::vector<TaskVector> sparse;
  if (stats) stats->trimmed_fraction.clear();
  for (size_t m = 0; m < models.size(); ++m) {
    const TaskVector tv = ComputeTaskVector(models[m], base, static_cast<int>(m));
    sparse.push_back(DareSparsify(tv, densities[m], seed));
    if (stats) stats->trimmed_fraction.push_back(ZeroFraction(tv, sparse.back()));
  }
  if (ties) {
    if (int8_mask) {
      return CombineBySignElection<int8_t>(base, base_values, sparse, weights,
                                           normalize, stats);
    }
    return CombineBySignElection<float>(base, base_values, sparse, weights,
                                        normalize, stats);
  }
  double weight_sum = 0;
  for (double w : weights) weight_sum += w;
  if (normalize && weight_sum == 0.0) {
    throw Error(ErrorCode::kZeroWeightSum, base.spec.name);
  }
  std::vector<double> merged(base_values.size(), 0.0);
  for (size_t m = 0; m < sparse.size(); ++m) {
    for (size_t i = 0; i < merged.size(); ++i) {
      merged[i] += weights[m] * sparse[m].delta[i];
    }
  }
  for (size_t i = 0; i < merged.size(); ++i) {
    if (normalize) merged[i] /= weight_sum;
    merged[i] += base_values[i];
  }
  if (stats) stats->sign_conflict_fraction = 0.0;
  return ToTensor(base, merged);
}

Tensor LinearMerge(std::span<const Tensor> tensors,
                   std::span<const double> weights, bool normalize) {
  if (tensors.empty() || weights.size() != tensors.size()) {
    throw Error(ErrorCode::kShapeMismatch, "need one weight per tensor");
  }
  for (const auto& t : tensors) CheckSameShape(tensors.front(), t);
  double weight_sum = 0;
  for (double w : weights) weight_sum += w;
  if (normalize && weight_sum == 0.0) {
    throw Error(ErrorCode::kZeroWeightSum, tensors.front().spec.name);
  }
  // Zero-weight terms are skipped entirely so that, e.g., weights [1, 0]
  // reproduce the first input bit for bit (signed zeros included).
  std::vector<double> merged(tensors.front().spec.num_elements(), 0.0);
  bool first_term = true;
  for (size_t m = 0; m < tensors.size(); ++m) {
    const std::vector<double> values = FiniteValues(tensors[m]);
    if (weights[m] == 0.0) continue;
    for (size_t i = 0; i < merged.size(); ++i) {
      merged[i] = first_term ? weights[m] * values[i]
                             : merged[i] + weights[m] * values[i];
    }
    first_term = false;
  }
  if (normalize) {
    for (double& v : merged) v /= weight_sum;
  }
  return ToTensor(tensors.front(), merged);
}

Tensor SlerpMerge(const Tensor& a, const Tensor& b, double t) {
  CheckSameShape(a, b);
  const std::vector<double> va = FiniteValues(a);
  const std::vector<double> vb = FiniteValues(b);
  double dot = 0, norm_a = 0, norm_b = 0;
  for (size_t i = 0; i < va.size(); ++i) {
    dot += va[i] * vb[i];
    norm_a += va[i] * va[i];
    norm_b += vb[i] * vb[i];
  }
  norm_a = std::sqrt(norm_a);
  norm_b = std::sqrt(norm_b);

  double coeff_a = 1.0 - t;
  double coeff_b = t;
  if (norm_a > 0.0 && norm_b > 0.0) {
    const double cosine = std::clamp(dot / (norm_a * norm_b), -1.0, 1.0);
    if (std::fabs(cosine) <= 1.0 - 1e-8) {
      const double omega = std::acos(cosine);
      const double sin_omega = std::sin(omega);
      coeff_a = std::sin((1.0 - t) * omega) / sin_omega;
      coeff_b = std::sin(t * omega) / sin_omega;
    }
  }
  std::vector<double> merged(va.size());
  for (size_t i = 0; i < va.size(); ++i) {
    if (coeff_b == 0.0) {
      merged[i] = coeff_a * va[i];
    } else if (coeff_a == 0.0) {
      merged[i] = coeff_b * vb[i];
    } else {
      merged[i] = coeff_a * va[i] + coeff_b * vb[i];
    }
  }
  return ToTensor(a, merged);
}

}  // namespace mf
