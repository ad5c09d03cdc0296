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

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <regex>
#include <sstream>

#include "json.hpp"
#include "mergeforge/error.h"
#include "test_util.h"

namespace mf {
namespace {

using testing::ScopedTempDir;

ErrorCode CodeOf(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::kIoFailure;
}

NllStream Stream(std::vector<long double> values, std::string dataset = "d",
                 std::string variant = "v") {
  return {std::move(dataset), std::move(variant), std::move(values)};
}

PerplexityReport Report(std::string dataset, std::string variant, double ppl) {
  PerplexityReport r;
  r.dataset = std::move(dataset);
  r.variant = std::move(variant);
  r.token_count = 1;
  r.mean_nll = std::log(static_cast<long double>(ppl));
  r.perplexity = ppl;
  return r;
}

TEST(PerplexityTest, Examples) {
  const PerplexityReport uniform = Perplexity(UniformNll("sec", "cpt", 50000, 4096));
  EXPECT_EQ(uniform.perplexity, 50000.0);
  EXPECT_EQ(uniform.token_count, 4096u);
  EXPECT_EQ(Perplexity(Stream({0, 0, 0})).perplexity, 1.0);
  EXPECT_EQ(Perplexity(Stream({std::log(2.0L), std::log(8.0L)})).perplexity, 4.0);
}

TEST(PerplexityTest, UniformIdentityAcrossVocabularies) {
  for (uint64_t vocab : {2ull, 3ull, 7ull, 1000ull, 32000ull, 50000ull, 128256ull}) {
    for (size_t n : {1u, 17u, 10000u}) {
      EXPECT_EQ(Perplexity(UniformNll("d", "v", vocab, n)).perplexity,
                static_cast<double>(vocab))
          << vocab << " x " << n;
    }
  }
}

TEST(PerplexityTest, Errors) {
  EXPECT_EQ(CodeOf([] { Perplexity(Stream({})); }), ErrorCode::kEmptyStream);
  EXPECT_EQ(CodeOf([] { Perplexity(Stream({1, NAN})); }), ErrorCode::kNonFiniteValue);
  EXPECT_EQ(CodeOf([] { Perplexity(Stream({INFINITY})); }), ErrorCode::kNonFiniteValue);
}

TEST(PerplexityTest, ReportInvariant) {
  std::mt19937_64 rng(4);
  std::exponential_distribution<double> dist(0.5);
  for (int trial = 0; trial < 100; ++trial) {
    NllStream s = Stream({});
    for (int i = 0; i < 1 + trial * 7; ++i) s.values.push_back(dist(rng));
    const PerplexityReport r = Perplexity(s);
    EXPECT_EQ(r.perplexity, static_cast<double>(std::exp(r.mean_nll)));
    EXPECT_GE(r.perplexity, 1.0);
    // Against a plain double-precision oracle.
    double sum = 0;
    for (long double v : s.values) sum += static_cast<double>(v);
    EXPECT_NEAR(r.perplexity, std::exp(sum / s.values.size()),
                1e-12 * r.perplexity);
  }
}

TEST(PerplexityTest, PermutationInvariance) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> dist(0, 12);
  NllStream s = Stream({});
  for (int i = 0; i < 5000; ++i) s.values.push_back(dist(rng));
  const double base = Perplexity(s).perplexity;
  for (int k = 0; k < 5; ++k) {
    std::shuffle(s.values.begin(), s.values.end(), rng);
    EXPECT_NEAR(Perplexity(s).perplexity, base, 1e-13 * base);
  }
}

TEST(PerplexityTest, ConcatenationConsistency) {
  std::mt19937_64 rng(15);
  std::gamma_distribution<double> dist(2.0, 1.5);
  std::uniform_int_distribution<int> len(1, 3000);
  for (int trial = 0; trial < 50; ++trial) {
    NllStream a = Stream({}), b = Stream({});
    for (int i = len(rng); i > 0; --i) a.values.push_back(dist(rng));
    for (int i = len(rng); i > 0; --i) b.values.push_back(dist(rng));
    NllStream ab = a;
    ab.values.insert(ab.values.end(), b.values.begin(), b.values.end());
    const PerplexityReport ra = Perplexity(a), rb = Perplexity(b);
    const double na = ra.token_count, nb = rb.token_count;
    const double expected =
        std::exp((na * std::log(ra.perplexity) + nb * std::log(rb.perplexity)) / (na + nb));
    const double got = Perplexity(ab).perplexity;
    EXPECT_LE(std::abs(got - expected), 1e-12 * expected) << trial;
  }
}

TEST(PerplexityTest, Monotonicity) {
  std::mt19937_64 rng(16);
  std::uniform_real_distribution<double> dist(0, 5);
  NllStream s = Stream({});
  for (int i = 0; i < 200; ++i) s.values.push_back(dist(rng));
  const double base = Perplexity(s).perplexity;
  for (size_t i = 0; i < s.values.size(); i += 13) {
    NllStream bumped = s;
    bumped.values[i] += 1e-3L;
    EXPECT_GT(Perplexity(bumped).perplexity, base) << i;
  }
}

TEST(PerplexityTest, CategoricalFixtureApproachesCrossEntropy) {
  const std::vector<double> data = {0.5, 0.25, 0.125, 0.125};
  const std::vector<double> model = {0.4, 0.3, 0.2, 0.1};
  double cross_entropy = 0;
  for (size_t i = 0; i < data.size(); ++i) cross_entropy -= data[i] * std::log(model[i]);
  const auto stream = SampleCategoricalNll("d", "v", model, data, 200000, 3);
  EXPECT_NEAR(Perplexity(stream).perplexity, std::exp(cross_entropy), 0.01);
  // Scoring with the data distribution itself gives exp(entropy) = 2^1.75.
  const auto self = SampleCategoricalNll("d", "v", data, data, 200000, 3);
  EXPECT_NEAR(Perplexity(self).perplexity, std::pow(2.0, 1.75), 0.01);
}

TEST(NllFileTest, LoadsHeaderAndValues) {
  const NllStream s = ParseNll("#dataset=wikitext variant=cpt\n0.5\n1.25\n3\n");
  EXPECT_EQ(s.dataset, "wikitext");
  EXPECT_EQ(s.variant, "cpt");
  EXPECT_EQ(s.values, (std::vector<long double>{0.5L, 1.25L, 3.0L}));
  EXPECT_EQ(ParseNll("#dataset=a variant=b\r\n 2 \r\n\r\n").values.size(), 1u);
  EXPECT_TRUE(ParseNll("#dataset=a variant=b").values.empty());
}

TEST(NllFileTest, RejectsBadInput) {
  EXPECT_EQ(CodeOf([] { ParseNll("#dataset=a variant=b\n-0.5\n"); }),
            ErrorCode::kNegativeValue);
  EXPECT_EQ(ParseNll("#dataset=a variant=b\n-0\n").values[0], 0.0L);
  for (const char* bad :
       {"", "0.5\n", "#dataset=a\n1\n", "#dataset= variant=b\n", "#variant=b dataset=a\n",
        "#dataset=a variant=b\nabc\n", "#dataset=a variant=b\n1.0 2.0\n",
        "#dataset=a variant=b\nnan\n", "#dataset=a variant=b\ninf\n",
        "#dataset=a variant=b\n1e99999\n", "#dataset=a variant=b\n.\n"}) {
    EXPECT_EQ(CodeOf([&] { ParseNll(bad); }), ErrorCode::kMalformedFile) << bad;
  }
}

TEST(NllFileTest, RoundTripIsExact) {
  ScopedTempDir dir;
  std::mt19937_64 rng(21);
  std::exponential_distribution<long double> dist(0.3L);
  NllStream s = Stream({}, "sec-10k", "cpt-merge");
  for (int i = 0; i < 1000; ++i) s.values.push_back(dist(rng));
  s.values.push_back(std::log(50000.0L));
  s.values.push_back(0);
  WriteNllFile(dir / "x.nll", s);
  const NllStream back = LoadNllFile(dir / "x.nll");
  EXPECT_EQ(back.dataset, s.dataset);
  EXPECT_EQ(back.variant, s.variant);
  ASSERT_EQ(back.values.size(), s.values.size());
  for (size_t i = 0; i < s.values.size(); ++i) EXPECT_EQ(back.values[i], s.values[i]) << i;

  WriteNllFile(dir / "u.nll", UniformNll("d", "v", 50000, 100));
  EXPECT_EQ(Perplexity(LoadNllFile(dir / "u.nll")).perplexity, 50000.0);
  EXPECT_EQ(CodeOf([&] { LoadNllFile(dir / "missing.nll"); }), ErrorCode::kIoFailure);
}

TEST(CompareVariantsTest, GroupsInFirstSeenOrder) {
  std::vector<PerplexityReport> reports;
  for (const char* d : {"beta", "alpha"}) {
    for (const char* v : {"instruct", "cpt", "cpt-merge"}) reports.push_back(Report(d, v, 2));
  }
  const ComparisonTable full = CompareVariants(reports);
  EXPECT_EQ(full.datasets, (std::vector<std::string>{"beta", "alpha"}));
  EXPECT_EQ(full.variants, (std::vector<std::string>{"instruct", "cpt", "cpt-merge"}));
  for (size_t r = 0; r < 2; ++r) {
    for (size_t c = 0; c < 3; ++c) {
      ASSERT_TRUE(full.cells[r][c]);
      EXPECT_EQ(full.cells[r][c]->dataset, full.datasets[r]);
      EXPECT_EQ(full.cells[r][c]->variant, full.variants[c]);
    }
  }
  reports.erase(reports.begin() + 4);
  const ComparisonTable partial = CompareVariants(reports);
  EXPECT_FALSE(partial.cells[1][1]);
  EXPECT_NE(RenderTable(partial, TableFormat::kText).find("\xE2\x80\x94"), std::string::npos);
  EXPECT_EQ(RenderTable(partial, TableFormat::kCsv).find("alpha,2.00000,\xE2\x80\x94,2.00000"),
            RenderTable(partial, TableFormat::kCsv).find("alpha"));

  reports.push_back(Report("beta", "cpt", 3));
  EXPECT_EQ(CodeOf([&] { CompareVariants(reports); }), ErrorCode::kDuplicateCell);
}

TEST(RenderTableTest, SignificantDigits) {
  EXPECT_EQ(FormatSignificant(4.0), "4.00000");
  EXPECT_EQ(FormatSignificant(50000.0), "50000.0");
  EXPECT_EQ(FormatSignificant(123456.7), "123457");
  EXPECT_EQ(FormatSignificant(1234567.0), "1.23457e+06");
  EXPECT_EQ(FormatSignificant(3.14159265), "3.14159");
}

TEST(RenderTableTest, CsvShapes) {
  const std::vector<PerplexityReport> one = {Report("X", "variant", 4.0)};
  EXPECT_EQ(RenderTable(CompareVariants(one), TableFormat::kCsv),
            "dataset,variant\nX,4.00000\n");
  std::vector<PerplexityReport> six;
  for (const char* d : {"a", "b"}) {
    for (const char* v : {"i", "c", "m"}) six.push_back(Report(d, v, 5));
  }
  const std::string csv = RenderTable(CompareVariants(six), TableFormat::kCsv);
  EXPECT_EQ(csv, "dataset,i,c,m\na,5.00000,5.00000,5.00000\nb,5.00000,5.00000,5.00000\n");
  const std::vector<PerplexityReport> quoted = {Report("a,b", "say \"x\"", 2)};
  EXPECT_EQ(RenderTable(CompareVariants(quoted), TableFormat::kCsv),
            "dataset,\"say \"\"x\"\"\"\n\"a,b\",2.00000\n");
}

TEST(RenderTableTest, CsvRoundTripAtEmittedPrecision) {
  std::mt19937_64 rng(31);
  std::lognormal_distribution<double> dist(2.0, 1.5);
  std::vector<PerplexityReport> reports;
  for (int d = 0; d < 4; ++d) {
    for (int v = 0; v < 3; ++v) {
      reports.push_back(Report("d" + std::to_string(d), "v" + std::to_string(v), dist(rng)));
    }
  }
  const ComparisonTable table = CompareVariants(reports);
  std::istringstream csv(RenderTable(table, TableFormat::kCsv));
  std::string line;
  std::getline(csv, line);
  for (size_t r = 0; std::getline(csv, line); ++r) {
    std::istringstream fields(line);
    std::string field;
    std::getline(fields, field, ',');
    EXPECT_EQ(field, table.datasets[r]);
    for (size_t c = 0; std::getline(fields, field, ','); ++c) {
      const double want = table.cells[r][c]->perplexity;
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%.5e", want);
      EXPECT_EQ(std::strtod(field.c_str(), nullptr), std::strtod(buf, nullptr));
    }
  }
}

TEST(RenderTableTest, SvgBarHeightsAreProportional) {
  const std::vector<PerplexityReport> reports = {
      Report("a", "instruct", 12.5), Report("a", "cpt", 7.25),  Report("a", "merge", 8.0),
      Report("b", "instruct", 30.0), Report("b", "cpt", 22.0), Report("b", "merge", 21.0)};
  const std::string svg = RenderTable(CompareVariants(reports), TableFormat::kSvgBars);
  const std::regex bar(
      "<rect x=\"[0-9.]+\" y=\"[0-9.]+\" width=\"[0-9.]+\" height=\"([0-9.]+)\" fill=\"[^\"]+\" "
      "data-dataset=\"([^\"]+)\" data-variant=\"([^\"]+)\"");
  double max_height = 0;
  std::vector<std::tuple<std::string, std::string, double>> bars;
  for (auto it = std::sregex_iterator(svg.begin(), svg.end(), bar); it != std::sregex_iterator();
       ++it) {
    const double h = std::stod((*it)[1]);
    max_height = std::max(max_height, h);
    bars.emplace_back((*it)[2], (*it)[3], h);
  }
  ASSERT_EQ(bars.size(), 6u);
  for (const auto& [dataset, variant, h] : bars) {
    const auto match = std::find_if(reports.begin(), reports.end(), [&](const auto& r) {
      return r.dataset == dataset && r.variant == variant;
    });
    ASSERT_NE(match, reports.end());
    EXPECT_NEAR(h / max_height, match->perplexity / 30.0, 0.005 * match->perplexity / 30.0)
        << dataset << "/" << variant;
  }
  for (const char* label : {"instruct", "cpt", "merge"}) {
    EXPECT_NE(svg.find(std::string(">") + label + "</text>"), std::string::npos);
  }
}

TEST(RenderTableTest, TextAlignsColumns) {
  const std::vector<PerplexityReport> reports = {Report("finance", "cpt", 4),
                                                 Report("news", "instruct", 12.5)};
  EXPECT_EQ(RenderTable(CompareVariants(reports), TableFormat::kText),
            "dataset      cpt  instruct\n"
            "finance  4.00000         \xE2\x80\x94\n"
            "news           \xE2\x80\x94   12.5000\n");
}

TEST(ReportsJsonTest, CarriesVersion) {
  const std::vector<PerplexityReport> reports = {Perplexity(UniformNll("d", "v", 8, 3))};
  const auto doc = nlohmann::json::parse(PerplexityReportsToJson(reports));
  EXPECT_EQ(doc["version"], 1);
  EXPECT_EQ(doc["reports"][0]["perplexity"], 8.0);
  EXPECT_EQ(doc["reports"][0]["token_count"], 3);
}

}  // namespace
}  // namespace mf
