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

#include "mergeforge/merge_driver.h"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <exception>
#include <mutex>
#include <thread>

#include "json.hpp"
#include "mergeforge/error.h"
#include "mergeforge/merge_kernels.h"

namespace mf {

namespace {

struct TensorJob {
  const TensorSpec* reference;
  TensorMergeRecord record;
};

Tensor MergeOne(const MergeConfig& config, const ModelSource* base,
                std::span<const ModelSource> models, const std::string& name,
                uint32_t layer_count, TensorMergeRecord& record) {
  std::vector<Tensor> inputs;
  inputs.reserve(models.size());
  for (const ModelSource& model : models) inputs.push_back(model.ReadTensor(name));

  record.name = name;
  record.method = std::string(MergeMethodName(config.method));
  for (const ModelEntry& entry : config.models) {
    record.weights.push_back(ResolveParameter(entry.weight, name, layer_count));
    record.densities.push_back(ResolveParameter(entry.density, name, layer_count));
  }

  KernelStats stats;
  Tensor merged;
  switch (config.method) {
    case MergeMethod::kTies:
      merged = TiesMerge(base->ReadTensor(name), inputs, record.weights,
                         record.densities, config.normalize, config.int8_mask,
                         &stats);
      break;
    case MergeMethod::kDareTies:
    case MergeMethod::kDareLinear:
      merged = DareMerge(base->ReadTensor(name), inputs, record.weights,
                         record.densities, config.seed.value_or(0),
                         config.method == MergeMethod::kDareTies,
                         config.normalize, config.int8_mask, &stats);
      break;
    case MergeMethod::kLinear:
      merged = LinearMerge(inputs, record.weights, config.normalize);
      break;
    case MergeMethod::kSlerp:
      merged = SlerpMerge(inputs[0], inputs[1], config.t.value_or(0.5));
      record.weights = {1.0 - config.t.value_or(0.5), config.t.value_or(0.5)};
      break;
  }
  record.trimmed_fraction = std::move(stats.trimmed_fraction);
  record.sign_conflict_fraction = stats.sign_conflict_fraction;
  return ConvertDType(merged, config.out_dtype);
}

int BoundedWorkers(const MergeOptions& options, const SpecIndex& reference,
                   size_t model_count) {
  int workers = std::max(1, options.workers);
  if (options.memory_budget_bytes == 0) return workers;
  uint64_t largest = 0;
  for (const auto& [name, spec] : reference) {
    largest = std::max(largest, spec.num_elements());
  }
  // Per tensor: raw F32 inputs plus double task vectors and their weighted
  // copies.
  const uint64_t per_tensor = std::max<uint64_t>(
      1, largest * ((model_count + 1) * sizeof(float) +
                    (2 * model_count + 2) * sizeof(double)));
  const uint64_t affordable = options.memory_budget_bytes / per_tensor;
  return static_cast<int>(std::clamp<uint64_t>(affordable, 1, workers));
}

}  // namespace

std::vector<SpecIndex> CollectSpecSets(const MergeConfig& config,
                                       const ModelSource* base,
                                       std::span<const ModelSource> models) {
  std::vector<SpecIndex> sets;
  if (config.RequiresBase()) {
    if (base == nullptr) {
      throw Error(ErrorCode::kMissingBaseModel, "no base checkpoint supplied");
    }
    sets.push_back(base->index());
  }
  for (const ModelSource& model : models) sets.push_back(model.index());
  return sets;
}

MergeReport MergeCheckpoints(const MergeConfig& config, const ModelSource* base,
                             std::span<const ModelSource> models,
                             const std::filesystem::path& out_path,
                             const MergeOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  const std::vector<SpecIndex> spec_sets = CollectSpecSets(config, base, models);
  const ValidationReport validation = ValidateConfig(config, spec_sets);
  if (!validation.ok) {
    std::string detail;
    for (const auto& issue : validation.issues) {
      if (!issue.structural()) continue;
      detail = std::string(IssueKindName(issue.kind)) + " " + issue.tensor + " (" +
               issue.detail + ")";
      break;
    }
    throw Error(ErrorCode::kValidationFailed, detail);
  }

  const SpecIndex& reference = spec_sets.front();
  MergeReport report;
  report.method = config.method;
  report.layer_count = options.layer_count.value_or(InferLayerCount(reference));
  if (report.layer_count == 0) {
    throw Error(ErrorCode::kSchemaError, "layer count must be positive");
  }
  report.workers = BoundedWorkers(options, reference, models.size());

  std::vector<TensorJob> jobs;
  std::vector<TensorSpec> plan;
  for (const auto& [name, spec] : reference) {
    jobs.push_back({&spec, {}});
    TensorSpec out = spec;
    out.dtype = config.out_dtype;
    plan.push_back(std::move(out));
  }

  CheckpointWriter writer(out_path, std::move(plan),
                          {{"merge_method", std::string(MergeMethodName(config.method))}});

  std::atomic<size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr first_error;
  std::mutex error_mu;
  const auto work = [&] {
    while (!failed.load()) {
      const size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      try {
        const Tensor merged = MergeOne(config, base, models, jobs[i].reference->name,
                                       report.layer_count, jobs[i].record);
        writer.Write(merged);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!first_error) first_error = std::current_exception();
        failed = true;
      }
    }
  };

  if (report.workers == 1) {
    work();
  } else {
    std::vector<std::thread> threads;
    for (int w = 0; w < report.workers; ++w) threads.emplace_back(work);
    for (auto& th : threads) th.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  report.bytes_written = writer.Finish().bytes;
  report.tensors_merged = jobs.size();
  for (auto& job : jobs) report.tensors.push_back(std::move(job.record));
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

std::string MergeReportToJson(const MergeReport& report) {
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& t : report.tensors) {
    tensors.push_back({{"name", t.name},
                       {"method", t.method},
                       {"weights", t.weights},
                       {"densities", t.densities},
                       {"trimmed_fraction", t.trimmed_fraction},
                       {"sign_conflict_fraction", t.sign_conflict_fraction}});
  }
  const nlohmann::json doc = {
      {"version", 1},
      {"method", std::string(MergeMethodName(report.method))},
      {"tensors_merged", report.tensors_merged},
      {"layer_count", report.layer_count},
      {"workers", report.workers},
      {"bytes_written", report.bytes_written},
      {"wall_seconds", report.wall_seconds},
      {"tensors", tensors}};
  return doc.dump(2) + "\n";
}

}  // namespace mf
