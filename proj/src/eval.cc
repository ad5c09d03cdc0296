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

#include "mergeforge/eval.h"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "json.hpp"
#include "mergeforge/error.h"

namespace mf {

namespace {

constexpr const char* kMissingCell = "\xE2\x80\x94";

std::string CsvField(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string XmlEscape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

size_t DisplayWidth(const std::string& s) {
  return static_cast<size_t>(std::count_if(
      s.begin(), s.end(), [](char c) { return (static_cast<unsigned char>(c) & 0xC0) != 0x80; }));
}

std::string Cell(const std::optional<PerplexityReport>& cell) {
  return cell ? FormatSignificant(cell->perplexity) : kMissingCell;
}

std::string RenderText(const ComparisonTable& table) {
  std::vector<std::vector<std::string>> grid;
  grid.push_back({"dataset"});
  for (const auto& v : table.variants) grid.back().push_back(v);
  for (size_t r = 0; r < table.datasets.size(); ++r) {
    grid.push_back({table.datasets[r]});
    for (const auto& cell : table.cells[r]) grid.back().push_back(Cell(cell));
  }
  std::vector<size_t> widths(table.variants.size() + 1, 0);
  for (const auto& row : grid) {
    for (size_t c = 0; c < row.size(); ++c) widths[c] = std::max(widths[c], DisplayWidth(row[c]));
  }
  std::string out;
  for (const auto& row : grid) {
    std::string line;
    for (size_t c = 0; c < row.size(); ++c) {
      const std::string pad(widths[c] - DisplayWidth(row[c]), ' ');
      if (c > 0) line += "  ";
      line += c == 0 ? row[c] + pad : pad + row[c];
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    out += line + "\n";
  }
  return out;
}

std::string RenderCsv(const ComparisonTable& table) {
  std::string out = "dataset";
  for (const auto& v : table.variants) out += "," + CsvField(v);
  out += "\n";
  for (size_t r = 0; r < table.datasets.size(); ++r) {
    out += CsvField(table.datasets[r]);
    for (const auto& cell : table.cells[r]) out += "," + Cell(cell);
    out += "\n";
  }
  return out;
}

std::string Num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

std::string RenderSvg(const ComparisonTable& table) {
  static constexpr const char* kPalette[] = {"#4e79a7", "#f28e2b", "#59a14f", "#e15759",
                                             "#76b7b2", "#edc948", "#b07aa1", "#9c755f"};
  constexpr double kBarWidth = 24, kGroupGap = 24, kLeft = 60, kTop = 20;
  constexpr double kPlotHeight = 240, kLegendRow = 18;
  const size_t nv = std::max<size_t>(1, table.variants.size());
  const double group_width = nv * kBarWidth + kGroupGap;
  const double width = kLeft + table.datasets.size() * group_width + 20;
  const double axis_y = kTop + kPlotHeight;
  const double height = axis_y + 30 + kLegendRow * table.variants.size() + 10;

  double max_value = 0;
  for (const auto& row : table.cells) {
    for (const auto& cell : row) {
      if (cell) max_value = std::max(max_value, cell->perplexity);
    }
  }

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << Num(width)
      << "\" height=\"" << Num(height) << "\" data-max=\"" << FormatSignificant(max_value)
      << "\">\n";
  svg << "  <line x1=\"" << Num(kLeft) << "\" y1=\"" << Num(axis_y) << "\" x2=\""
      << Num(width - 10) << "\" y2=\"" << Num(axis_y) << "\" stroke=\"#333\"/>\n";
  for (size_t r = 0; r < table.datasets.size(); ++r) {
    const double x0 = kLeft + r * group_width + kGroupGap / 2;
    for (size_t c = 0; c < table.variants.size(); ++c) {
      const auto& cell = table.cells[r][c];
      if (!cell) continue;
      const double h = max_value > 0 ? kPlotHeight * cell->perplexity / max_value : 0;
      svg << "  <rect x=\"" << Num(x0 + c * kBarWidth) << "\" y=\"" << Num(axis_y - h)
          << "\" width=\"" << Num(kBarWidth - 2) << "\" height=\"" << Num(h) << "\" fill=\""
          << kPalette[c % std::size(kPalette)] << "\" data-dataset=\""
          << XmlEscape(table.datasets[r]) << "\" data-variant=\""
          << XmlEscape(table.variants[c]) << "\" data-value=\""
          << FormatSignificant(cell->perplexity) << "\"/>\n";
    }
    svg << "  <text x=\"" << Num(x0 + nv * kBarWidth / 2) << "\" y=\"" << Num(axis_y + 16)
        << "\" text-anchor=\"middle\" font-size=\"11\">" << XmlEscape(table.datasets[r])
        << "</text>\n";
  }
  for (size_t c = 0; c < table.variants.size(); ++c) {
    const double y = axis_y + 30 + c * kLegendRow;
    svg << "  <rect class=\"legend\" x=\"" << Num(kLeft) << "\" y=\"" << Num(y)
        << "\" width=\"12\" height=\"12\" fill=\"" << kPalette[c % std::size(kPalette)]
        << "\"/>\n";
    svg << "  <text x=\"" << Num(kLeft + 18) << "\" y=\"" << Num(y + 10)
        << "\" font-size=\"11\">" << XmlEscape(table.variants[c]) << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace

PerplexityReport Perplexity(const NllStream& stream) {
  if (stream.values.empty()) {
    throw Error(ErrorCode::kEmptyStream, stream.dataset + "/" + stream.variant);
  }
  // Mean as x0 + sum(x - x0) / n with compensated summation: exact for a
  // constant stream and accurate to a few ulps otherwise.
  const long double x0 = stream.values.front();
  long double sum = 0, compensation = 0;
  for (size_t i = 0; i < stream.values.size(); ++i) {
    const long double x = stream.values[i];
    if (!std::isfinite(x)) {
      throw Error(ErrorCode::kNonFiniteValue, stream.dataset + "/" + stream.variant +
                                                  " value " + std::to_string(i));
    }
    const long double term = x - x0;
    const long double t = sum + term;
    compensation += std::fabs(sum) >= std::fabs(term) ? (sum - t) + term : (term - t) + sum;
    sum = t;
  }
  PerplexityReport report;
  report.dataset = stream.dataset;
  report.variant = stream.variant;
  report.token_count = stream.values.size();
  report.mean_nll = x0 + (sum + compensation) / static_cast<long double>(stream.values.size());
  report.perplexity = static_cast<double>(std::exp(report.mean_nll));
  return report;
}

NllStream ParseNll(std::string_view text, std::string_view origin) {
  const auto fail = [&](size_t line, const std::string& why) {
    return Error(ErrorCode::kMalformedFile,
                 std::string(origin) + ":" + std::to_string(line) + ": " + why);
  };
  size_t pos = 0;
  size_t line_no = 0;
  const auto next_line = [&](std::string& line) {
    if (pos >= text.size()) return false;
    size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    line.assign(text.substr(pos, end - pos));
    if (!line.empty() && line.back() == '\r') line.pop_back();
    pos = end + 1;
    ++line_no;
    return true;
  };

  std::string line;
  if (!next_line(line)) throw fail(1, "missing header");
  constexpr std::string_view kDataset = "#dataset=";
  constexpr std::string_view kVariant = " variant=";
  const size_t variant_at = line.find(kVariant);
  if (line.rfind(kDataset, 0) != 0 || variant_at == std::string::npos) {
    throw fail(1, "header must be '#dataset=<label> variant=<label>'");
  }
  NllStream stream;
  stream.dataset = line.substr(kDataset.size(), variant_at - kDataset.size());
  stream.variant = line.substr(variant_at + kVariant.size());
  if (stream.dataset.empty() || stream.variant.empty() ||
      stream.dataset.find(' ') != std::string::npos ||
      stream.variant.find(' ') != std::string::npos) {
    throw fail(1, "labels must be non-empty and contain no spaces");
  }

  while (next_line(line)) {
    const size_t first = line.find_first_not_of(" \t");
    if (first == std::string::npos) continue;
    const size_t last = line.find_last_not_of(" \t");
    const std::string token = line.substr(first, last - first + 1);
    if (token.find_first_not_of("0123456789+-.eE") != std::string::npos) {
      throw fail(line_no, "not a decimal number: '" + token + "'");
    }
    char* end = nullptr;
    errno = 0;
    const long double value = std::strtold(token.c_str(), &end);
    if (end != token.c_str() + token.size() || token.empty()) {
      throw fail(line_no, "not a decimal number: '" + token + "'");
    }
    if (errno == ERANGE && std::isinf(value)) throw fail(line_no, "value out of range");
    if (value < 0) {
      throw Error(ErrorCode::kNegativeValue, std::string(origin) + ":" +
                                                 std::to_string(line_no) + ": " + token);
    }
    stream.values.push_back(value == 0 ? 0.0L : value);
  }
  return stream;
}

NllStream LoadNllFile(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoFailure, "cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return ParseNll(buffer.str(), path.string());
}

void WriteNllFile(const std::filesystem::path& path, const NllStream& stream) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (f == nullptr) throw Error(ErrorCode::kIoFailure, "cannot create " + path.string());
  bool ok = std::fprintf(f, "#dataset=%s variant=%s\n", stream.dataset.c_str(),
                         stream.variant.c_str()) > 0;
  for (long double v : stream.values) ok = ok && std::fprintf(f, "%.21Lg\n", v) > 0;
  ok = (std::fclose(f) == 0) && ok;
  if (!ok) throw Error(ErrorCode::kIoFailure, "cannot write " + path.string());
}

ComparisonTable CompareVariants(std::span<const PerplexityReport> reports) {
  ComparisonTable table;
  std::map<std::string, size_t> rows, cols;
  for (const auto& r : reports) {
    if (rows.emplace(r.dataset, rows.size()).second) table.datasets.push_back(r.dataset);
    if (cols.emplace(r.variant, cols.size()).second) table.variants.push_back(r.variant);
  }
  table.cells.assign(table.datasets.size(),
                     std::vector<std::optional<PerplexityReport>>(table.variants.size()));
  for (const auto& r : reports) {
    auto& cell = table.cells[rows[r.dataset]][cols[r.variant]];
    if (cell) {
      throw Error(ErrorCode::kDuplicateCell, r.dataset + " x " + r.variant);
    }
    cell = r;
  }
  return table;
}

std::optional<TableFormat> ParseTableFormat(std::string_view name) {
  if (name == "text") return TableFormat::kText;
  if (name == "csv") return TableFormat::kCsv;
  if (name == "svg-bars" || name == "svg") return TableFormat::kSvgBars;
  return std::nullopt;
}

std::string FormatSignificant(double value) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%#.6g", value);
  std::string s = buf;
  if (!s.empty() && s.back() == '.') s.pop_back();
  return s;
}

std::string RenderTable(const ComparisonTable& table, TableFormat format) {
  switch (format) {
    case TableFormat::kText: return RenderText(table);
    case TableFormat::kCsv: return RenderCsv(table);
    case TableFormat::kSvgBars: return RenderSvg(table);
  }
  return {};
}

std::string PerplexityReportsToJson(std::span<const PerplexityReport> reports) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : reports) {
    rows.push_back({{"dataset", r.dataset},
                    {"variant", r.variant},
                    {"token_count", r.token_count},
                    {"mean_nll", static_cast<double>(r.mean_nll)},
                    {"perplexity", r.perplexity}});
  }
  return nlohmann::json({{"version", 1}, {"reports", rows}}).dump(2) + "\n";
}

NllStream SampleCategoricalNll(std::string dataset, std::string variant,
                               std::span<const double> model_probs,
                               std::span<const double> data_probs, size_t tokens,
                               uint64_t seed) {
  if (model_probs.size() != data_probs.size() || model_probs.empty()) {
    throw Error(ErrorCode::kShapeMismatch, "distributions differ in vocabulary size");
  }
  std::mt19937_64 rng(seed);
  std::discrete_distribution<size_t> draw(data_probs.begin(), data_probs.end());
  NllStream stream{std::move(dataset), std::move(variant), {}};
  stream.values.reserve(tokens);
  for (size_t i = 0; i < tokens; ++i) {
    const long double p = model_probs[draw(rng)];
    if (p <= 0) throw Error(ErrorCode::kNonFiniteValue, "model assigns zero probability");
    stream.values.push_back(-std::log(p));
  }
  return stream;
}

NllStream UniformNll(std::string dataset, std::string variant, uint64_t vocab,
                     size_t tokens) {
  return {std::move(dataset), std::move(variant),
          std::vector<long double>(tokens, std::log(static_cast<long double>(vocab)))};
}

}  // namespace mf
