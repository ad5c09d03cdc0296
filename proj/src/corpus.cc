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

// Document pipeline, JSONL shards and corpus mixing.

#include "mergeforge/corpus.h"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <exception>
#include <mutex>
#include <thread>

#include "json.hpp"
#include "mergeforge/error.h"

namespace mf {

namespace {

template <typename T>
class BoundedQueue {
 public:
  explicit BoundedQueue(size_t capacity) : capacity_(capacity) {}

  // False once the queue is closed.
  bool Push(T value) {
    std::unique_lock<std::mutex> lock(mu_);
    not_full_.wait(lock, [&] { return closed_ || items_.size() < capacity_; });
    if (closed_) return false;
    items_.push_back(std::move(value));
    not_empty_.notify_one();
    return true;
  }

  // nullopt once closed and drained.
  std::optional<T> Pop() {
    std::unique_lock<std::mutex> lock(mu_);
    not_empty_.wait(lock, [&] { return closed_ || !items_.empty(); });
    if (items_.empty()) return std::nullopt;
    T value = std::move(items_.front());
    items_.pop_front();
    not_full_.notify_one();
    return value;
  }

  void Close() {
    std::lock_guard<std::mutex> lock(mu_);
    closed_ = true;
    not_full_.notify_all();
    not_empty_.notify_all();
  }

  // Close and discard queued items.
  void Cancel() {
    std::lock_guard<std::mutex> lock(mu_);
    closed_ = true;
    items_.clear();
    not_full_.notify_all();
    not_empty_.notify_all();
  }

 private:
  std::mutex mu_;
  std::condition_variable not_full_;
  std::condition_variable not_empty_;
  std::deque<T> items_;
  size_t capacity_;
  bool closed_ = false;
};

// Limits documents between the reader and the writer, which bounds the
// writer's reorder buffer.
class InFlightWindow {
 public:
  explicit InFlightWindow(size_t slots) : free_(slots) {}

  bool Acquire() {
    std::unique_lock<std::mutex> lock(mu_);
    cv_.wait(lock, [&] { return cancelled_ || free_ > 0; });
    if (cancelled_) return false;
    --free_;
    return true;
  }

  void Release() {
    std::lock_guard<std::mutex> lock(mu_);
    ++free_;
    cv_.notify_one();
  }

  void Cancel() {
    std::lock_guard<std::mutex> lock(mu_);
    cancelled_ = true;
    cv_.notify_all();
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  size_t free_;
  bool cancelled_ = false;
};

struct Sequenced {
  uint64_t seq;
  DocumentRecord doc;
};

std::optional<DropReason> RejectedFormatReason(DocumentFormat format) {
  switch (format) {
    case DocumentFormat::kPdf: return DropReason::kPdf;
    case DocumentFormat::kExcel: return DropReason::kExcel;
    case DocumentFormat::kZip: return DropReason::kZip;
    case DocumentFormat::kUnknown: return DropReason::kUnknownFormat;
    default: return std::nullopt;
  }
}

bool IsShardFileName(const std::string& name) {
  // shard-NNNNN.jsonl
  if (name.size() < 12 || name.rfind("shard-", 0) != 0) return false;
  if (name.substr(name.size() - 6) != ".jsonl") return false;
  const std::string digits = name.substr(6, name.size() - 12);
  return !digits.empty() &&
         std::all_of(digits.begin(), digits.end(), [](char c) { return c >= '0' && c <= '9'; });
}

std::vector<std::filesystem::path> ListShards(const std::filesystem::path& directory) {
  std::vector<std::filesystem::path> shards;
  std::error_code ec;
  for (const auto& entry : std::filesystem::directory_iterator(directory, ec)) {
    if (entry.is_regular_file() && IsShardFileName(entry.path().filename().string())) {
      shards.push_back(entry.path());
    }
  }
  if (ec) throw Error(ErrorCode::kIoFailure, "cannot list " + directory.string());
  std::sort(shards.begin(), shards.end());
  return shards;
}

}  // namespace

std::set<DocumentFormat> ParseAcceptedFormats(std::string_view list) {
  std::set<DocumentFormat> formats;
  size_t start = 0;
  while (start <= list.size()) {
    size_t end = list.find(',', start);
    if (end == std::string_view::npos) end = list.size();
    const std::string_view item = list.substr(start, end - start);
    const auto format = ParseDocumentFormat(item);
    if (!format || RejectedFormatReason(*format)) {
      throw Error(ErrorCode::kSchemaError,
                  "accepted formats are html, markdown, plaintext; got '" +
                      std::string(item) + "'");
    }
    formats.insert(*format);
    start = end + 1;
  }
  return formats;
}

void ProcessDocument(DocumentRecord& doc, const PipelinePolicy& policy) {
  doc.format = DetectFormat(doc.raw, doc.id);
  doc.text.reset();
  doc.drop_reason = RejectedFormatReason(doc.format);
  if (doc.drop_reason) return;
  if (!policy.accepted.count(doc.format)) {
    doc.drop_reason = DropReason::kNotAccepted;
    return;
  }
  std::string text;
  if (doc.format == DocumentFormat::kHtml) {
    try {
      text = ExtractText(doc.raw);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kNotHtml) throw;
      doc.drop_reason = DropReason::kExtractFailed;
      return;
    }
  } else {
    text = doc.raw;
  }
  auto cleaned = CleanText(text, policy.min_chars);
  if (auto* reason = std::get_if<DropReason>(&cleaned)) {
    doc.drop_reason = *reason;
    return;
  }
  doc.text = std::move(std::get<std::string>(cleaned));
  doc.token_estimate = policy.counter(*doc.text);
}

uint64_t PipelineStats::dropped_total() const {
  uint64_t total = 0;
  for (const auto& [reason, count] : dropped) total += count;
  return total;
}

std::string PipelineStatsToJson(const PipelineStats& stats) {
  nlohmann::json dropped = nlohmann::json::object();
  for (const auto& [reason, count] : stats.dropped) {
    dropped[std::string(DropReasonName(reason))] = count;
  }
  const nlohmann::json doc = {{"version", 1},
                              {"read", stats.read},
                              {"extracted", stats.extracted},
                              {"written", stats.written},
                              {"dropped", dropped},
                              {"dropped_total", stats.dropped_total()},
                              {"bytes_in", stats.bytes_in},
                              {"bytes_out", stats.bytes_out},
                              {"elapsed_seconds", stats.elapsed_seconds}};
  return doc.dump(2) + "\n";
}

LocalDirectorySource::LocalDirectorySource(std::filesystem::path root)
    : root_(std::move(root)) {
  std::error_code ec;
  if (!std::filesystem::is_directory(root_, ec)) {
    throw Error(ErrorCode::kIoFailure, root_.string() + " is not a directory");
  }
  for (auto it = std::filesystem::recursive_directory_iterator(root_, ec);
       !ec && it != std::filesystem::recursive_directory_iterator(); it.increment(ec)) {
    if (it->is_regular_file()) files_.push_back(it->path().lexically_relative(root_));
  }
  if (ec) throw Error(ErrorCode::kIoFailure, "cannot walk " + root_.string());
  std::sort(files_.begin(), files_.end(),
            [](const auto& a, const auto& b) { return a.generic_string() < b.generic_string(); });
}

std::optional<SourceItem> LocalDirectorySource::Next() {
  if (next_ >= files_.size()) return std::nullopt;
  const std::filesystem::path& rel = files_[next_++];
  const std::filesystem::path full = root_ / rel;
  std::ifstream in(full, std::ios::binary);
  std::string raw((std::istreambuf_iterator<char>(in)), {});
  if (!in && !in.eof()) throw Error(ErrorCode::kIoFailure, "cannot read " + full.string());
  if (!in.is_open()) throw Error(ErrorCode::kIoFailure, "cannot open " + full.string());
  return SourceItem{rel.generic_string(), full.string(), std::move(raw)};
}

std::optional<SourceItem> VectorSource::Next() {
  if (next_ >= items_.size()) return std::nullopt;
  return items_[next_++];
}

std::string ShardRecordToJsonLine(const ShardRecord& record) {
  const nlohmann::json doc = {{"id", record.id},
                              {"source", record.source},
                              {"text", record.text},
                              {"token_estimate", record.token_estimate}};
  return doc.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) + "\n";
}

JsonlShardWriter::JsonlShardWriter(std::filesystem::path directory,
                                   uint64_t max_shard_bytes)
    : directory_(std::move(directory)), max_shard_bytes_(std::max<uint64_t>(1, max_shard_bytes)) {
  std::error_code ec;
  std::filesystem::create_directories(directory_, ec);
  if (ec) throw Error(ErrorCode::kIoFailure, "cannot create " + directory_.string());
  // Shards left by an earlier run would otherwise be read back as output.
  for (const auto& stale : ListShards(directory_)) std::filesystem::remove(stale, ec);
}

JsonlShardWriter::~JsonlShardWriter() {
  if (!finished_) Abort();
}

void JsonlShardWriter::OpenShard() {
  if (current_ != nullptr && std::fclose(current_) != 0) {
    current_ = nullptr;
    throw Error(ErrorCode::kIoFailure, "cannot close " + shards_.back().string());
  }
  char name[32];
  std::snprintf(name, sizeof(name), "shard-%05zu.jsonl", shards_.size());
  shards_.push_back(directory_ / name);
  current_ = std::fopen(shards_.back().c_str(), "wb");
  if (current_ == nullptr) {
    throw Error(ErrorCode::kIoFailure, "cannot create " + shards_.back().string());
  }
  current_bytes_ = 0;
}

uint64_t JsonlShardWriter::Write(const ShardRecord& record) {
  const std::string line = ShardRecordToJsonLine(record);
  if (current_ == nullptr ||
      (current_bytes_ > 0 && current_bytes_ + line.size() > max_shard_bytes_)) {
    OpenShard();
  }
  if (std::fwrite(line.data(), 1, line.size(), current_) != line.size()) {
    throw Error(ErrorCode::kIoFailure, "short write to " + shards_.back().string());
  }
  current_bytes_ += line.size();
  return line.size();
}

void JsonlShardWriter::Finish() {
  if (current_ == nullptr && shards_.empty()) OpenShard();
  if (current_ != nullptr) {
    const int rc = std::fclose(current_);
    current_ = nullptr;
    if (rc != 0) throw Error(ErrorCode::kIoFailure, "cannot close " + shards_.back().string());
  }
  finished_ = true;
}

void JsonlShardWriter::Abort() {
  if (current_ != nullptr) std::fclose(current_);
  current_ = nullptr;
  std::error_code ec;
  for (const auto& shard : shards_) std::filesystem::remove(shard, ec);
  shards_.clear();
  finished_ = true;
}

PipelineStats RunPipeline(DocumentSource& source, ShardSink& sink,
                          const PipelinePolicy& policy, int workers) {
  if (workers < 1) throw Error(ErrorCode::kSchemaError, "workers must be >= 1");
  const auto start = std::chrono::steady_clock::now();
  const size_t depth = 2 * static_cast<size_t>(workers);
  BoundedQueue<Sequenced> input(depth);
  BoundedQueue<Sequenced> output(depth);
  InFlightWindow window(4 * static_cast<size_t>(workers) + 4);

  std::mutex error_mu;
  std::exception_ptr error;
  const auto fail = [&](std::exception_ptr e) {
    {
      std::lock_guard<std::mutex> lock(error_mu);
      if (!error) error = e;
    }
    window.Cancel();
    input.Cancel();
    output.Cancel();
  };

  std::thread reader([&] {
    try {
      for (uint64_t seq = 0;; ++seq) {
        if (!window.Acquire()) break;
        std::optional<SourceItem> item = source.Next();
        if (!item) break;
        DocumentRecord doc;
        doc.id = std::move(item->id);
        doc.source = std::move(item->source);
        doc.raw = std::move(item->raw);
        if (!input.Push({seq, std::move(doc)})) break;
      }
      input.Close();
    } catch (...) {
      fail(std::current_exception());
    }
  });

  std::atomic<int> live_workers{workers};
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      try {
        while (auto item = input.Pop()) {
          ProcessDocument(item->doc, policy);
          if (!output.Push(std::move(*item))) break;
        }
      } catch (...) {
        fail(std::current_exception());
      }
      if (live_workers.fetch_sub(1) == 1) output.Close();
    });
  }

  PipelineStats stats;
  std::map<uint64_t, DocumentRecord> pending;
  uint64_t next_seq = 0;
  try {
    while (auto item = output.Pop()) {
      pending.emplace(item->seq, std::move(item->doc));
      for (auto it = pending.find(next_seq); it != pending.end();
           it = pending.find(next_seq)) {
        const DocumentRecord& doc = it->second;
        ++stats.read;
        stats.bytes_in += doc.raw.size();
        if (doc.text || doc.drop_reason == DropReason::kTooShort) ++stats.extracted;
        if (doc.drop_reason) {
          ++stats.dropped[*doc.drop_reason];
        } else {
          stats.bytes_out += sink.Write({doc.id, doc.source, *doc.text, doc.token_estimate});
          ++stats.written;
        }
        pending.erase(it);
        ++next_seq;
        window.Release();
      }
    }
  } catch (...) {
    fail(std::current_exception());
  }

  reader.join();
  for (auto& t : pool) t.join();
  if (error) {
    sink.Abort();
    std::rethrow_exception(error);
  }
  sink.Finish();
  stats.elapsed_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return stats;
}

JsonlShardReader::JsonlShardReader(const std::filesystem::path& directory)
    : shards_(ListShards(directory)) {}

JsonlShardReader::~JsonlShardReader() = default;

std::optional<ShardRecord> JsonlShardReader::Next() {
  std::string line;
  while (true) {
    if (!in_) {
      if (shard_ >= shards_.size()) return std::nullopt;
      in_ = std::make_unique<std::ifstream>(shards_[shard_], std::ios::binary);
      if (!*in_) throw Error(ErrorCode::kIoFailure, "cannot open " + shards_[shard_].string());
      line_ = 0;
    }
    if (!std::getline(*in_, line)) {
      in_.reset();
      ++shard_;
      continue;
    }
    ++line_;
    if (line.empty()) continue;
    const std::string where = shards_[shard_].string() + ":" + std::to_string(line_);
    nlohmann::json doc = nlohmann::json::parse(line, nullptr, false);
    if (doc.is_discarded() || !doc.is_object() || !doc.contains("id") ||
        !doc["id"].is_string() || !doc.contains("text") || !doc["text"].is_string()) {
      throw Error(ErrorCode::kMalformedFile, where + ": not a shard record");
    }
    ShardRecord record;
    record.id = doc["id"].get<std::string>();
    record.text = doc["text"].get<std::string>();
    if (doc.contains("source") && doc["source"].is_string()) {
      record.source = doc["source"].get<std::string>();
    }
    if (doc.contains("token_estimate") && doc["token_estimate"].is_number_unsigned()) {
      record.token_estimate = doc["token_estimate"].get<uint64_t>();
    }
    return record;
  }
}

MixRatio ParseMixRatio(std::string_view text) {
  const size_t colon = text.find(':');
  MixRatio ratio;
  const auto parse = [&](std::string_view part, uint64_t& out) {
    const auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), out);
    return ec == std::errc() && ptr == part.data() + part.size() && out > 0;
  };
  if (colon == std::string_view::npos || !parse(text.substr(0, colon), ratio.domain) ||
      !parse(text.substr(colon + 1), ratio.general)) {
    throw Error(ErrorCode::kSchemaError,
                "ratio must be D:G with positive integers, got '" + std::string(text) + "'");
  }
  return ratio;
}

MixSummary MixCorpora(const RecordStream& domain, const RecordStream& general,
                      MixRatio ratio, const TokenCounter& counter,
                      const std::function<void(const MixedDocument&)>& emit) {
  if (ratio.domain == 0 || ratio.general == 0) {
    throw Error(ErrorCode::kSchemaError, "ratio terms must be positive");
  }
  MixSummary summary;
  std::optional<ShardRecord> next_domain = domain();
  std::optional<ShardRecord> next_general = general();
  while (next_domain || next_general) {
    bool take_general;
    if (!next_general) {
      take_general = false;
    } else if (!next_domain) {
      take_general = true;
    } else {
      take_general = static_cast<unsigned __int128>(summary.domain_tokens) * ratio.general >=
                     static_cast<unsigned __int128>(summary.general_tokens) * ratio.domain;
    }
    std::optional<ShardRecord>& slot = take_general ? next_general : next_domain;
    MixedDocument doc{take_general ? Corpus::kGeneral : Corpus::kDomain, std::move(*slot), 0};
    doc.tokens = counter(doc.record.text);
    if (take_general) {
      summary.general_tokens += doc.tokens;
      ++summary.general_docs;
    } else {
      summary.domain_tokens += doc.tokens;
      ++summary.domain_docs;
    }
    emit(doc);
    slot = take_general ? general() : domain();
  }
  return summary;
}

}  // namespace mf
