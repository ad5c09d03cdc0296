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

#include "mergeforge/checkpoint.h"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <bit>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "mergeforge/error.h"

namespace mf {

namespace {

using nlohmann::json;

// Headers beyond this size are treated as a corrupt length prefix.
constexpr uint64_t kMaxHeaderBytes = 100ull << 20;

std::string ErrnoMessage(const std::filesystem::path& path) {
  return path.string() + ": " + std::strerror(errno);
}

void WriteLittleEndianU64(uint64_t value, std::byte* out) {
  for (int i = 0; i < 8; ++i) {
    out[i] = static_cast<std::byte>((value >> (8 * i)) & 0xFFu);
  }
}

uint64_t ReadLittleEndianU64(const unsigned char* in) {
  uint64_t value = 0;
  for (int i = 7; i >= 0; --i) value = (value << 8) | in[i];
  return value;
}

void PreadFully(int fd, void* buffer, size_t size, uint64_t offset,
                const std::filesystem::path& path) {
  auto* out = static_cast<char*>(buffer);
  while (size > 0) {
    const ssize_t n = ::pread(fd, out, size, static_cast<off_t>(offset));
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(ErrorCode::kIoFailure, ErrnoMessage(path));
    }
    if (n == 0) {
      throw Error(ErrorCode::kTruncatedFile,
                  path.string() + ": unexpected end of file");
    }
    out += n;
    size -= static_cast<size_t>(n);
    offset += static_cast<uint64_t>(n);
  }
}

void PwriteFully(int fd, const void* buffer, size_t size, uint64_t offset,
                 const std::filesystem::path& path) {
  const auto* in = static_cast<const char*>(buffer);
  while (size > 0) {
    const ssize_t n = ::pwrite(fd, in, size, static_cast<off_t>(offset));
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(ErrorCode::kIoFailure, ErrnoMessage(path));
    }
    in += n;
    size -= static_cast<size_t>(n);
    offset += static_cast<uint64_t>(n);
  }
}

bool CheckedProduct(const Shape& shape, uint64_t element_size,
                    uint64_t* out) {
  uint64_t product = element_size;
  for (uint64_t dim : shape) {
    if (dim != 0 && product > UINT64_MAX / dim) return false;
    product *= dim;
  }
  *out = product;
  return true;
}

TensorSpec ParseSpecEntry(const std::string& name, const json& entry) {
  auto malformed = [&](const std::string& why) {
    return Error(ErrorCode::kMalformedHeader, "tensor '" + name + "': " + why);
  };
  if (!entry.is_object()) throw malformed("entry is not an object");
  for (const auto& item : entry.items()) {
    if (item.key() != "dtype" && item.key() != "shape" &&
        item.key() != "data_offsets") {
      throw malformed("unexpected field '" + item.key() + "'");
    }
  }
  TensorSpec spec;
  spec.name = name;

  const auto dtype_it = entry.find("dtype");
  if (dtype_it == entry.end() || !dtype_it->is_string()) {
    throw malformed("missing dtype");
  }
  const auto dtype = ParseDTypeName(dtype_it->get<std::string>());
  if (!dtype) {
    throw malformed("unknown dtype '" + dtype_it->get<std::string>() + "'");
  }
  spec.dtype = *dtype;

  const auto shape_it = entry.find("shape");
  if (shape_it == entry.end() || !shape_it->is_array()) {
    throw malformed("missing shape");
  }
  for (const auto& dim : *shape_it) {
    if (!dim.is_number_unsigned()) throw malformed("bad shape dimension");
    spec.shape.push_back(dim.get<uint64_t>());
  }

  const auto offsets_it = entry.find("data_offsets");
  if (offsets_it == entry.end() || !offsets_it->is_array() ||
      offsets_it->size() != 2 || !(*offsets_it)[0].is_number_unsigned() ||
      !(*offsets_it)[1].is_number_unsigned()) {
    throw malformed("data_offsets must be two non-negative integers");
  }
  spec.begin = (*offsets_it)[0].get<uint64_t>();
  spec.end = (*offsets_it)[1].get<uint64_t>();
  if (spec.end < spec.begin) throw malformed("data_offsets end < begin");

  uint64_t expected = 0;
  if (!CheckedProduct(spec.shape, ElementSize(spec.dtype), &expected)) {
    throw malformed("shape overflows");
  }
  if (spec.end - spec.begin != expected) {
    throw malformed("byte span " + std::to_string(spec.end - spec.begin) +
                    " does not match dtype/shape (" +
                    std::to_string(expected) + ")");
  }
  return spec;
}

}  // namespace

uint64_t NumElements(const Shape& shape) {
  uint64_t n = 1;
  for (uint64_t dim : shape) n *= dim;
  return n;
}

std::string ShapeToString(const Shape& shape) {
  std::string out = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Tensor Tensor::FromFloats(std::string name, Shape shape,
                          std::span<const float> values, DType dtype) {
  Tensor f32;
  f32.spec.name = std::move(name);
  f32.spec.dtype = DType::kF32;
  f32.spec.shape = std::move(shape);
  if (f32.spec.num_elements() != values.size()) {
    throw Error(ErrorCode::kShapeMismatch,
                "tensor '" + f32.spec.name + "': " +
                    std::to_string(values.size()) +
                    " values for shape " + ShapeToString(f32.spec.shape));
  }
  f32.spec.end = f32.spec.byte_size();
  f32.data.resize(values.size() * sizeof(float));
  if (!values.empty()) {
    std::memcpy(f32.data.data(), values.data(), f32.data.size());
  }
  if (dtype == DType::kF32) return f32;
  return ConvertDType(f32, dtype);
}

std::vector<float> Tensor::ToFloats() const {
  const uint64_t n = spec.num_elements();
  std::vector<float> out(n);
  switch (spec.dtype) {
    case DType::kF32:
      if (n) std::memcpy(out.data(), data.data(), n * sizeof(float));
      break;
    case DType::kF16:
    case DType::kBF16:
      for (uint64_t i = 0; i < n; ++i) {
        const uint16_t bits =
            static_cast<uint16_t>(std::to_integer<uint16_t>(data[2 * i]) |
                                  (std::to_integer<uint16_t>(data[2 * i + 1])
                                   << 8));
        out[i] = spec.dtype == DType::kF16 ? HalfBitsToFloat(bits)
                                           : BFloat16BitsToFloat(bits);
      }
      break;
  }
  return out;
}

Tensor ConvertDType(const Tensor& tensor, DType target) {
  if (tensor.spec.dtype == target) return tensor;
  const std::vector<float> values = tensor.ToFloats();
  Tensor out;
  out.spec = tensor.spec;
  out.spec.dtype = target;
  out.spec.end = out.spec.begin + out.spec.byte_size();
  out.data.resize(out.spec.byte_size());
  if (target == DType::kF32) {
    if (!values.empty()) {
      std::memcpy(out.data.data(), values.data(), out.data.size());
    }
    return out;
  }
  for (size_t i = 0; i < values.size(); ++i) {
    const uint16_t bits = target == DType::kF16
                              ? FloatToHalfBits(values[i])
                              : FloatToBFloat16Bits(values[i]);
    out.data[2 * i] = static_cast<std::byte>(bits & 0xFFu);
    out.data[2 * i + 1] = static_cast<std::byte>(bits >> 8);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reader

struct CheckpointReader::FileHandle {
  int fd = -1;
  ~FileHandle() {
    if (fd >= 0) ::close(fd);
  }
};

CheckpointReader CheckpointReader::Open(const std::filesystem::path& path) {
  CheckpointReader reader;
  reader.path_ = path;
  reader.file_ = std::make_shared<FileHandle>();
  reader.file_->fd = ::open(path.c_str(), O_RDONLY | O_CLOEXEC);
  if (reader.file_->fd < 0) throw Error(ErrorCode::kIoFailure, ErrnoMessage(path));
  const int fd = reader.file_->fd;

  struct stat st {};
  if (::fstat(fd, &st) != 0) throw Error(ErrorCode::kIoFailure, ErrnoMessage(path));
  const uint64_t file_size = static_cast<uint64_t>(st.st_size);
  if (file_size < 8) {
    throw Error(ErrorCode::kTruncatedFile,
                path.string() + ": shorter than the 8-byte length prefix");
  }

  unsigned char prefix[8];
  PreadFully(fd, prefix, 8, 0, path);
  const uint64_t header_len = ReadLittleEndianU64(prefix);
  if (header_len > kMaxHeaderBytes) {
    throw Error(ErrorCode::kMalformedHeader,
                path.string() + ": implausible header length " +
                    std::to_string(header_len));
  }
  if (header_len > file_size - 8) {
    throw Error(ErrorCode::kTruncatedFile,
                path.string() + ": header length " +
                    std::to_string(header_len) + " exceeds file size");
  }

  std::string header(header_len, '\0');
  PreadFully(fd, header.data(), header_len, 8, path);

  std::set<std::string> seen_keys;
  bool duplicate = false;
  std::string duplicate_name;
  const json::parser_callback_t on_event =
      [&](int depth, json::parse_event_t event, json& parsed) {
        if (depth == 1 && event == json::parse_event_t::key) {
          const auto& key = parsed.get_ref<const std::string&>();
          if (!seen_keys.insert(key).second && !duplicate) {
            duplicate = true;
            duplicate_name = key;
          }
        }
        return true;
      };
  json doc;
  try {
    doc = json::parse(header, on_event);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kMalformedHeader,
                path.string() + ": invalid header JSON: " + e.what());
  }
  if (!doc.is_object()) {
    throw Error(ErrorCode::kMalformedHeader,
                path.string() + ": header is not a JSON object");
  }
  if (duplicate) {
    throw Error(ErrorCode::kMalformedHeader,
                path.string() + ": tensor '" + duplicate_name +
                    "' listed twice");
  }

  reader.data_start_ = 8 + header_len;
  const uint64_t data_size = file_size - reader.data_start_;

  for (const auto& item : doc.items()) {
    if (item.key() == "__metadata__") {
      if (!item.value().is_object()) {
        throw Error(ErrorCode::kMalformedHeader,
                    path.string() + ": __metadata__ is not an object");
      }
      for (const auto& kv : item.value().items()) {
        if (!kv.value().is_string()) {
          throw Error(ErrorCode::kMalformedHeader,
                      path.string() + ": metadata value for '" + kv.key() +
                          "' is not a string");
        }
        reader.metadata_[kv.key()] = kv.value().get<std::string>();
      }
      continue;
    }
    TensorSpec spec = ParseSpecEntry(item.key(), item.value());
    if (spec.end > data_size) {
      throw Error(ErrorCode::kTruncatedFile,
                  path.string() + ": tensor '" + spec.name +
                      "' extends past end of file");
    }
    reader.index_.emplace(spec.name, std::move(spec));
  }

  std::vector<const TensorSpec*> by_offset;
  for (const auto& [name, spec] : reader.index_) {
    if (spec.begin != spec.end) by_offset.push_back(&spec);
  }
  std::sort(by_offset.begin(), by_offset.end(),
            [](const TensorSpec* a, const TensorSpec* b) {
              return a->begin < b->begin;
            });
  for (size_t i = 1; i < by_offset.size(); ++i) {
    if (by_offset[i]->begin < by_offset[i - 1]->end) {
      throw Error(ErrorCode::kOffsetOverlap,
                  path.string() + ": '" + by_offset[i - 1]->name + "' and '" +
                      by_offset[i]->name + "' overlap");
    }
  }
  return reader;
}

bool CheckpointReader::Contains(std::string_view name) const {
  return index_.find(name) != index_.end();
}

const TensorSpec& CheckpointReader::Spec(std::string_view name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) {
    throw Error(ErrorCode::kUnknownTensor,
                std::string(name) + " not in " + path_.string());
  }
  return it->second;
}

Tensor CheckpointReader::ReadTensor(std::string_view name) const {
  Tensor tensor;
  tensor.spec = Spec(name);
  tensor.data.resize(tensor.spec.end - tensor.spec.begin);
  if (!tensor.data.empty()) {
    PreadFully(file_->fd, tensor.data.data(), tensor.data.size(),
               data_start_ + tensor.spec.begin, path_);
  }
  return tensor;
}

std::vector<TensorSpec> CheckpointReader::ListTensors() const {
  std::vector<TensorSpec> specs;
  specs.reserve(index_.size());
  for (const auto& [name, spec] : index_) specs.push_back(spec);
  std::stable_sort(specs.begin(), specs.end(),
                   [](const TensorSpec& a, const TensorSpec& b) {
                     return a.begin < b.begin;
                   });
  return specs;
}

// ---------------------------------------------------------------------------
// Writer

std::string EncodeHeader(std::span<const TensorSpec> specs,
                         const Metadata& metadata) {
  json doc = json::object();
  if (!metadata.empty()) {
    json meta = json::object();
    for (const auto& [k, v] : metadata) meta[k] = v;
    doc["__metadata__"] = std::move(meta);
  }
  for (const TensorSpec& spec : specs) {
    doc[spec.name] = {{"dtype", std::string(DTypeName(spec.dtype))},
                      {"shape", spec.shape},
                      {"data_offsets", {spec.begin, spec.end}}};
  }
  std::string header = doc.dump();
  header.append((8 - header.size() % 8) % 8, ' ');
  return header;
}

CheckpointWriter::CheckpointWriter(std::filesystem::path path,
                                   std::vector<TensorSpec> plan,
                                   Metadata metadata)
    : path_(std::move(path)), plan_(std::move(plan)) {
  uint64_t offset = 0;
  for (size_t i = 0; i < plan_.size(); ++i) {
    TensorSpec& spec = plan_[i];
    if (spec.name == "__metadata__") {
      throw Error(ErrorCode::kDuplicateName, "reserved tensor name");
    }
    if (!position_.emplace(spec.name, i).second) {
      throw Error(ErrorCode::kDuplicateName, spec.name);
    }
    spec.begin = offset;
    spec.end = offset + spec.byte_size();
    offset = spec.end;
  }
  written_.assign(plan_.size(), false);

  const std::string header = EncodeHeader(plan_, metadata);
  data_start_ = 8 + header.size();
  total_bytes_ = data_start_ + offset;

  staging_path_ = path_;
  staging_path_ += ".partial";
  fd_ = ::open(staging_path_.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC,
               0644);
  if (fd_ < 0) throw Error(ErrorCode::kIoFailure, ErrnoMessage(staging_path_));

  std::vector<std::byte> head(data_start_);
  WriteLittleEndianU64(header.size(), head.data());
  std::memcpy(head.data() + 8, header.data(), header.size());
  try {
    PwriteFully(fd_, head.data(), head.size(), 0, staging_path_);
    if (::ftruncate(fd_, static_cast<off_t>(total_bytes_)) != 0) {
      throw Error(ErrorCode::kIoFailure, ErrnoMessage(staging_path_));
    }
  } catch (...) {
    ::close(fd_);
    fd_ = -1;
    std::error_code ec;
    std::filesystem::remove(staging_path_, ec);
    throw;
  }
}

CheckpointWriter::~CheckpointWriter() {
  if (fd_ >= 0) ::close(fd_);
  if (!finished_) {
    std::error_code ec;
    std::filesystem::remove(staging_path_, ec);
  }
}

void CheckpointWriter::Write(const Tensor& tensor) {
  std::lock_guard<std::mutex> lock(mu_);
  const auto it = position_.find(tensor.spec.name);
  if (it == position_.end()) {
    throw Error(ErrorCode::kUnknownTensor,
                tensor.spec.name + " is not part of the write plan");
  }
  const TensorSpec& slot = plan_[it->second];
  if (written_[it->second]) throw Error(ErrorCode::kDuplicateName, slot.name);
  if (slot.dtype != tensor.spec.dtype || slot.shape != tensor.spec.shape ||
      tensor.data.size() != slot.byte_size()) {
    throw Error(ErrorCode::kShapeMismatch,
                slot.name + ": planned " + std::string(DTypeName(slot.dtype)) +
                    ShapeToString(slot.shape) + ", got " +
                    std::string(DTypeName(tensor.spec.dtype)) +
                    ShapeToString(tensor.spec.shape));
  }
  if (!tensor.data.empty()) {
    PwriteFully(fd_, tensor.data.data(), tensor.data.size(),
                data_start_ + slot.begin, staging_path_);
  }
  written_[it->second] = true;
}

WriteSummary CheckpointWriter::Finish() {
  std::lock_guard<std::mutex> lock(mu_);
  for (size_t i = 0; i < plan_.size(); ++i) {
    if (!written_[i]) {
      throw Error(ErrorCode::kIoFailure,
                  "tensor '" + plan_[i].name + "' was never written");
    }
  }
  if (::close(fd_) != 0) {
    fd_ = -1;
    throw Error(ErrorCode::kIoFailure, ErrnoMessage(staging_path_));
  }
  fd_ = -1;
  std::error_code ec;
  std::filesystem::rename(staging_path_, path_, ec);
  if (ec) {
    throw Error(ErrorCode::kIoFailure, path_.string() + ": " + ec.message());
  }
  finished_ = true;
  return WriteSummary{plan_.size(), total_bytes_};
}

WriteSummary WriteCheckpoint(const std::filesystem::path& path,
                             std::span<const Tensor> tensors,
                             const Metadata& metadata) {
  std::vector<TensorSpec> plan;
  plan.reserve(tensors.size());
  for (const Tensor& t : tensors) plan.push_back(t.spec);
  CheckpointWriter writer(path, std::move(plan), metadata);
  for (const Tensor& t : tensors) writer.Write(t);
  return writer.Finish();
}

// ---------------------------------------------------------------------------
// Sharded models

ModelSource ModelSource::FromReader(CheckpointReader reader) {
  ModelSource source;
  for (const auto& [name, spec] : reader.index()) {
    source.owner_.emplace(name, 0);
    source.index_.emplace(name, spec);
  }
  source.shards_.push_back(std::move(reader));
  return source;
}

ModelSource ModelSource::Open(const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  fs::path target = path;
  if (fs::is_directory(path)) {
    std::vector<fs::path> indexes;
    std::vector<fs::path> containers;
    for (const auto& entry : fs::directory_iterator(path)) {
      const std::string file = entry.path().filename().string();
      if (file.ends_with(".index.json")) indexes.push_back(entry.path());
      if (file.ends_with(".safetensors")) containers.push_back(entry.path());
    }
    if (indexes.size() == 1) {
      target = indexes.front();
    } else if (indexes.empty() && containers.size() == 1) {
      target = containers.front();
    } else {
      throw Error(ErrorCode::kIoFailure,
                  path.string() +
                      ": expected one shard index or one container");
    }
  }
  if (target.extension() != ".json") {
    return FromReader(CheckpointReader::Open(target));
  }

  std::ifstream in(target);
  if (!in) throw Error(ErrorCode::kIoFailure, ErrnoMessage(target));
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kMalformedHeader,
                target.string() + ": invalid shard index: " + e.what());
  }
  const auto map_it = doc.find("weight_map");
  if (!doc.is_object() || map_it == doc.end() || !map_it->is_object()) {
    throw Error(ErrorCode::kMalformedHeader,
                target.string() + ": missing weight_map object");
  }

  ModelSource source;
  std::map<std::string, size_t> shard_position;
  for (const auto& item : map_it->items()) {
    if (!item.value().is_string()) {
      throw Error(ErrorCode::kMalformedHeader,
                  target.string() + ": shard for '" + item.key() +
                      "' is not a string");
    }
    const std::string shard = item.value().get<std::string>();
    auto pos = shard_position.find(shard);
    if (pos == shard_position.end()) {
      pos = shard_position.emplace(shard, source.shards_.size()).first;
      source.shards_.push_back(
          CheckpointReader::Open(target.parent_path() / shard));
    }
    const CheckpointReader& reader = source.shards_[pos->second];
    if (!reader.Contains(item.key())) {
      throw Error(ErrorCode::kUnknownTensor,
                  item.key() + " not found in shard " + shard);
    }
    source.owner_.emplace(item.key(), pos->second);
    source.index_.emplace(item.key(), reader.Spec(item.key()));
  }
  return source;
}

bool ModelSource::Contains(std::string_view name) const {
  return index_.find(name) != index_.end();
}

const TensorSpec& ModelSource::Spec(std::string_view name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) {
    throw Error(ErrorCode::kUnknownTensor, std::string(name));
  }
  return it->second;
}

Tensor ModelSource::ReadTensor(std::string_view name) const {
  const auto it = owner_.find(name);
  if (it == owner_.end()) {
    throw Error(ErrorCode::kUnknownTensor, std::string(name));
  }
  return shards_[it->second].ReadTensor(name);
}

std::filesystem::path WriteShardedCheckpoint(
    const std::filesystem::path& directory, std::string_view stem,
    std::span<const Tensor> tensors, uint64_t max_shard_bytes) {
  std::vector<std::vector<Tensor>> shards(1);
  uint64_t current = 0;
  for (const Tensor& t : tensors) {
    if (!shards.back().empty() &&
        current + t.spec.byte_size() > max_shard_bytes) {
      shards.emplace_back();
      current = 0;
    }
    shards.back().push_back(t);
    current += t.spec.byte_size();
  }
  json weight_map = json::object();
  for (size_t i = 0; i < shards.size(); ++i) {
    char file[96];
    std::snprintf(file, sizeof(file), "%.*s-%05zu-of-%05zu.safetensors",
                  static_cast<int>(stem.size()), stem.data(), i + 1,
                  shards.size());
    WriteCheckpoint(directory / file, shards[i]);
    for (const Tensor& t : shards[i]) {
      if (weight_map.contains(t.spec.name)) {
        throw Error(ErrorCode::kDuplicateName, t.spec.name);
      }
      weight_map[t.spec.name] = file;
    }
  }
  const std::filesystem::path index_path =
      directory / (std::string(stem) + ".safetensors.index.json");
  std::ofstream out(index_path);
  out << json{{"weight_map", weight_map}}.dump(2) << "\n";
  if (!out) throw Error(ErrorCode::kIoFailure, ErrnoMessage(index_path));
  return index_path;
}

}  // namespace mf
