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

#ifndef MERGEFORGE_CORPUS_H_
#define MERGEFORGE_CORPUS_H_

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace mf {

enum class DocumentFormat { kHtml, kMarkdown, kPlaintext, kPdf, kExcel, kZip, kUnknown };

std::string_view DocumentFormatName(DocumentFormat format);
std::optional<DocumentFormat> ParseDocumentFormat(std::string_view name);

// Rejected formats are reported under their own reason so a run summary shows
// how many PDFs, spreadsheets and archives were skipped.
enum class DropReason {
  kPdf,
  kExcel,
  kZip,
  kUnknownFormat,
  kNotAccepted,    // a text format excluded by the policy
  kExtractFailed,  // detected as HTML but no markup could be parsed
  kTooShort,
};

std::string_view DropReasonName(DropReason reason);

struct DocumentRecord {
  std::string id;
  std::string source;
  std::string raw;
  DocumentFormat format = DocumentFormat::kUnknown;
  std::optional<std::string> text;
  std::optional<DropReason> drop_reason;
  uint64_t token_estimate = 0;
};

// Magic bytes first, then markup sniffing, then the extension.
DocumentFormat DetectFormat(std::string_view raw, std::string_view name);

// HTML to block-structured text: headings become "#" lines, paragraphs and
// table rows are separated by blank lines, list items get "- ". Script,
// style, nav and head contents are removed. A block is dropped when more
// than half of its characters are link text. Throws NotHtml when the input
// holds no markup at all. Invalid UTF-8 is replaced with U+FFFD.
std::string ExtractText(std::string_view html);

// NFC, LF line endings, no trailing whitespace, blank-line runs collapsed to
// a single blank line, no leading or trailing blank lines. Returns TooShort
// when fewer than `min_chars` code points remain.
std::variant<std::string, DropReason> CleanText(std::string_view text,
                                                size_t min_chars);

// Replaces ill-formed UTF-8 sequences with U+FFFD.
std::string ToValidUtf8(std::string_view bytes);
bool IsValidUtf8(std::string_view bytes);

using TokenCounter = std::function<uint64_t(std::string_view)>;

// ceil(1.3 * whitespace-separated words).
uint64_t EstimateTokens(std::string_view text);

struct PipelinePolicy {
  std::set<DocumentFormat> accepted = {DocumentFormat::kHtml, DocumentFormat::kMarkdown,
                                       DocumentFormat::kPlaintext};
  size_t min_chars = 200;
  TokenCounter counter = EstimateTokens;
};

// Parses "html,markdown,plaintext". Throws SchemaError on formats that cannot
// yield text.
std::set<DocumentFormat> ParseAcceptedFormats(std::string_view list);

// Detect, gate, extract and clean one document in place.
void ProcessDocument(DocumentRecord& doc, const PipelinePolicy& policy);

struct PipelineStats {
  uint64_t read = 0;
  uint64_t extracted = 0;
  uint64_t written = 0;
  std::map<DropReason, uint64_t> dropped;
  uint64_t bytes_in = 0;
  uint64_t bytes_out = 0;
  double elapsed_seconds = 0;

  uint64_t dropped_total() const;
};

std::string PipelineStatsToJson(const PipelineStats& stats);

struct SourceItem {
  std::string id;
  std::string source;
  std::string raw;
};

class DocumentSource {
 public:
  virtual ~DocumentSource() = default;
  // Next document or nullopt at the end. Throws IoFailure.
  virtual std::optional<SourceItem> Next() = 0;
};

// Regular files below `root` in lexicographic order of their relative path,
// which also serves as the document id.
class LocalDirectorySource : public DocumentSource {
 public:
  explicit LocalDirectorySource(std::filesystem::path root);
  std::optional<SourceItem> Next() override;
  size_t size() const { return files_.size(); }

 private:
  std::filesystem::path root_;
  std::vector<std::filesystem::path> files_;
  size_t next_ = 0;
};

class VectorSource : public DocumentSource {
 public:
  explicit VectorSource(std::vector<SourceItem> items) : items_(std::move(items)) {}
  std::optional<SourceItem> Next() override;

 private:
  std::vector<SourceItem> items_;
  size_t next_ = 0;
};

struct ShardRecord {
  std::string id;
  std::string source;
  std::string text;
  uint64_t token_estimate = 0;
};

std::string ShardRecordToJsonLine(const ShardRecord& record);

class ShardSink {
 public:
  virtual ~ShardSink() = default;
  // Returns bytes written. Throws IoFailure.
  virtual uint64_t Write(const ShardRecord& record) = 0;
  virtual void Finish() = 0;
  // Removes everything written so far.
  virtual void Abort() = 0;
};

// shard-00000.jsonl, shard-00001.jsonl, ... in `directory`, each holding at
// most `max_shard_bytes` unless a single line is larger. An empty run still
// produces one empty shard.
class JsonlShardWriter : public ShardSink {
 public:
  static constexpr uint64_t kDefaultShardBytes = 256ull << 20;

  explicit JsonlShardWriter(std::filesystem::path directory,
                            uint64_t max_shard_bytes = kDefaultShardBytes);
  ~JsonlShardWriter() override;

  uint64_t Write(const ShardRecord& record) override;
  void Finish() override;
  void Abort() override;

  const std::vector<std::filesystem::path>& shards() const { return shards_; }

 private:
  void OpenShard();

  std::filesystem::path directory_;
  uint64_t max_shard_bytes_;
  std::vector<std::filesystem::path> shards_;
  std::FILE* current_ = nullptr;
  uint64_t current_bytes_ = 0;
  bool finished_ = false;
};

// Reader thread, `workers` processing threads and the calling thread as the
// single writer, connected by bounded queues. Records are written in source
// order whatever the worker count. On IoFailure the sink is aborted and the
// error rethrown.
PipelineStats RunPipeline(DocumentSource& source, ShardSink& sink,
                          const PipelinePolicy& policy, int workers);

// Reads the JSONL shards of a directory back in shard order.
class JsonlShardReader {
 public:
  explicit JsonlShardReader(const std::filesystem::path& directory);
  ~JsonlShardReader();
  JsonlShardReader(const JsonlShardReader&) = delete;
  JsonlShardReader& operator=(const JsonlShardReader&) = delete;

  // Throws MalformedFile on a line that is not a shard record.
  std::optional<ShardRecord> Next();

 private:
  std::vector<std::filesystem::path> shards_;
  size_t shard_ = 0;
  std::unique_ptr<std::ifstream> in_;
  uint64_t line_ = 0;
};

struct MixRatio {
  uint64_t domain = 1;
  uint64_t general = 1;
};

// "70:1". Throws SchemaError.
MixRatio ParseMixRatio(std::string_view text);

enum class Corpus { kDomain, kGeneral };

struct MixedDocument {
  Corpus origin;
  ShardRecord record;
  uint64_t tokens;
};

struct MixSummary {
  uint64_t domain_tokens = 0;
  uint64_t general_tokens = 0;
  uint64_t domain_docs = 0;
  uint64_t general_docs = 0;
};

using RecordStream = std::function<std::optional<ShardRecord>()>;

// Greedy document-level interleaving: with D and G the tokens emitted so far,
// the next document comes from the general stream iff it is non-empty and
// D * ratio.general >= G * ratio.domain (or the domain stream is exhausted).
MixSummary MixCorpora(const RecordStream& domain, const RecordStream& general,
                      MixRatio ratio, const TokenCounter& counter,
                      const std::function<void(const MixedDocument&)>& emit);

}  // namespace mf

#endif  // MERGEFORGE_CORPUS_H_
