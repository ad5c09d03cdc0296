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

#ifndef MERGEFORGE_EVAL_H_
#define MERGEFORGE_EVAL_H_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mf {

// Per-token negative log-likelihoods in nats. Values are held in extended
// precision so that text fixtures round-trip exactly.
struct NllStream {
  std::string dataset;
  std::string variant;
  std::vector<long double> values;
};

struct PerplexityReport {
  std::string dataset;
  std::string variant;
  uint64_t token_count = 0;
  long double mean_nll = 0;
  double perplexity = 1;  // expl(mean_nll) rounded once
};

// Throws EmptyStream or NonFiniteValue.
PerplexityReport Perplexity(const NllStream& stream);

// "#dataset=<label> variant=<label>" then one decimal value per line.
// Throws MalformedFile or NegativeValue.
NllStream LoadNllFile(const std::filesystem::path& path);
NllStream ParseNll(std::string_view text, std::string_view origin = "<memory>");
// Writes 21 significant digits, enough to restore every long double.
void WriteNllFile(const std::filesystem::path& path, const NllStream& stream);

struct ComparisonTable {
  std::vector<std::string> datasets;  // rows, first-seen order
  std::vector<std::string> variants;  // columns, first-seen order
  // cells[row][column]
  std::vector<std::vector<std::optional<PerplexityReport>>> cells;
};

// Throws DuplicateCell when a (dataset, variant) pair repeats.
ComparisonTable CompareVariants(std::span<const PerplexityReport> reports);

enum class TableFormat { kText, kCsv, kSvgBars };

std::optional<TableFormat> ParseTableFormat(std::string_view name);

// Cells use 6 significant digits; a missing cell renders as U+2014. SVG bars
// are grouped by dataset with heights proportional to perplexity.
std::string RenderTable(const ComparisonTable& table, TableFormat format);

// 6 significant digits, e.g. "4.00000", "50000.0", "1.23457e+06".
std::string FormatSignificant(double value);

std::string PerplexityReportsToJson(std::span<const PerplexityReport> reports);

// Test fixtures: NLLs of tokens drawn from `data_probs` as scored by a model
// with `model_probs` (both categorical over the same vocabulary).
NllStream SampleCategoricalNll(std::string dataset, std::string variant,
                               std::span<const double> model_probs,
                               std::span<const double> data_probs, size_t tokens,
                               uint64_t seed);

// Every token scored ln(vocab), as by a uniform model.
NllStream UniformNll(std::string dataset, std::string variant, uint64_t vocab,
                     size_t tokens);

}  // namespace mf

#endif  // MERGEFORGE_EVAL_H_
