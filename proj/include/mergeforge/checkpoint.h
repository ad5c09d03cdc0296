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

#ifndef MERGEFORGE_CHECKPOINT_H_
#define MERGEFORGE_CHECKPOINT_H_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mergeforge/dtype.h"

namespace mf {

// Container layout:
//   [u64 little-endian header length N][N bytes of UTF-8 JSON][data region]
// The JSON maps tensor name -> {"dtype", "shape", "data_offsets"} with offsets
// relative to the start of the data region, plus an optional "__metadata__"
// object of string -> string.

using Shape = std::vector<uint64_t>;
using Metadata = std::map<std::string, std::string>;

uint64_t NumElements(const Shape& shape);
std::string ShapeToString(const Shape& shape);

struct TensorSpec {
  std::string name;
  DType dtype = DType::kF32;
  Shape shape;
  uint64_t begin = 0;
  uint64_t end = 0;

  uint64_t num_elements() const { return NumElements(shape); }
  uint64_t byte_size() const { return num_elements() * ElementSize(dtype); }

  friend bool operator==(const TensorSpec&, const TensorSpec&) = default;
};

using SpecIndex = std::map<std::string, TensorSpec, std::less<>>;

struct Tensor {
  TensorSpec spec;
  std::vector<std::byte> data;

  // Builds a tensor of `dtype` from F32 values (narrowing as needed). The
  // returned spec has offsets (0, byte_size).
  static Tensor FromFloats(std::string name, Shape shape,
                           std::span<const float> values,
                           DType dtype = DType::kF32);

  // Decodes every element to F32. Exact for F16/BF16 sources.
  std::vector<float> ToFloats() const;
};

Tensor ConvertDType(const Tensor& tensor, DType target);

// Read-only view of a single container file. The header is parsed and
// validated on open; tensor bytes are fetched on demand with positional reads,
// so one reader may be shared across threads.
class CheckpointReader {
 public:
  static CheckpointReader Open(const std::filesystem::path& path);

  const std::filesystem::path& path() const { return path_; }
  const SpecIndex& index() const { return index_; }
  const Metadata& metadata() const { return metadata_; }
  uint64_t data_start() const { return data_start_; }

  bool Contains(std::string_view name) const;
  const TensorSpec& Spec(std::string_view name) const;
  Tensor ReadTensor(std::string_view name) const;

  // Specs ordered by data offset.
  std::vector<TensorSpec> ListTensors() const;

 private:
  struct FileHandle;

  CheckpointReader() = default;

  std::filesystem::path path_;
  std::shared_ptr<FileHandle> file_;
  SpecIndex index_;
  Metadata metadata_;
  uint64_t data_start_ = 0;
};

inline CheckpointReader OpenCheckpoint(const std::filesystem::path& path) {
  return CheckpointReader::Open(path);
}

struct WriteSummary {
  uint64_t count = 0;
  uint64_t bytes = 0;  // whole file, header included
};

// Writes a container whose layout is fixed up front by `plan` (name, dtype
// and shape of every tensor; data laid out in plan order without padding).
// Tensor bytes may then arrive in any order and from any thread. The file is
// staged next to its destination and only renamed into place by Finish(); a
// writer destroyed before Finish() removes the staged file.
class CheckpointWriter {
 public:
  CheckpointWriter(std::filesystem::path path, std::vector<TensorSpec> plan,
                   Metadata metadata = {});
  ~CheckpointWriter();

  CheckpointWriter(const CheckpointWriter&) = delete;
  CheckpointWriter& operator=(const CheckpointWriter&) = delete;

  void Write(const Tensor& tensor);
  WriteSummary Finish();

  const std::vector<TensorSpec>& plan() const { return plan_; }

 private:
  std::filesystem::path path_;
  std::filesystem::path staging_path_;
  std::vector<TensorSpec> plan_;
  std::map<std::string, size_t, std::less<>> position_;
  std::vector<bool> written_;
  uint64_t data_start_ = 0;
  uint64_t total_bytes_ = 0;
  int fd_ = -1;
  bool finished_ = false;
  std::mutex mu_;
};

WriteSummary WriteCheckpoint(const std::filesystem::path& path,
                             std::span<const Tensor> tensors,
                             const Metadata& metadata = {});

// Serialized header bytes (JSON, space-padded to a multiple of 8) for specs
// whose offsets are already assigned.
std::string EncodeHeader(std::span<const TensorSpec> specs,
                         const Metadata& metadata);

// A model that may be spread across several containers. Opening accepts a
// single container, a shard index ({"weight_map": {tensor: shard_file}}), or a
// directory holding either.
class ModelSource {
 public:
  static ModelSource Open(const std::filesystem::path& path);
  static ModelSource FromReader(CheckpointReader reader);

  const SpecIndex& index() const { return index_; }
  bool Contains(std::string_view name) const;
  const TensorSpec& Spec(std::string_view name) const;
  Tensor ReadTensor(std::string_view name) const;
  size_t shard_count() const { return shards_.size(); }

 private:
  std::vector<CheckpointReader> shards_;
  std::map<std::string, size_t, std::less<>> owner_;
  SpecIndex index_;
};

// Splits `tensors` (in order) into shards of at most `max_shard_bytes` of
// tensor data each and writes them plus an index file into `directory`.
// Returns the index file path.
std::filesystem::path WriteShardedCheckpoint(
    const std::filesystem::path& directory, std::string_view stem,
    std::span<const Tensor> tensors, uint64_t max_shard_bytes);

}  // namespace mf

#endif  // MERGEFORGE_CHECKPOINT_H_
