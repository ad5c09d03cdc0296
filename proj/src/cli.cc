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

#include "mergeforge/cli.h"

#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "mergeforge/checkpoint.h"
#include "mergeforge/corpus.h"
#include "mergeforge/error.h"
#include "mergeforge/eval.h"
#include "mergeforge/merge_config.h"
#include "mergeforge/merge_driver.h"

namespace mf::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr int kReportVersion = 1;

struct Settings {
  int workers = std::max(1u, std::thread::hardware_concurrency());
  std::string log_level = "warn";
  bool json = false;
  uint64_t min_chars = 200;
  uint64_t shard_bytes = JsonlShardWriter::kDefaultShardBytes;
  std::string accept = "html,markdown,plaintext";
  uint64_t memory_budget = 0;
};

// Values given on the command line; unset ones fall through to the
// environment and the settings file.
struct FlagValues {
  std::string settings_path;
  int workers = 0;
  std::string log_level;
  bool json = false;
  uint64_t min_chars = 0;
  uint64_t shard_bytes = 0;
  std::string accept;
  uint64_t memory_budget = 0;
  std::map<std::string, const CLI::Option*> given;

  bool Given(const std::string& name) const {
    const auto it = given.find(name);
    return it != given.end() && it->second != nullptr && it->second->count() > 0;
  }
};

uint64_t ParseUnsigned(std::string_view text, const std::string& what) {
  uint64_t value = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw Error(ErrorCode::kSchemaError, what + " must be a non-negative integer, got '" +
                                             std::string(text) + "'");
  }
  return value;
}

bool ParseBool(std::string_view text, const std::string& what) {
  if (text == "1" || text == "true" || text == "yes") return true;
  if (text == "0" || text == "false" || text == "no" || text.empty()) return false;
  throw Error(ErrorCode::kSchemaError, what + " must be true or false");
}

void ApplySettingsFile(const fs::path& path, Settings& s) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoFailure, "cannot open settings " + path.string());
  const json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) {
    throw Error(ErrorCode::kSyntaxError, path.string() + " is not a JSON object");
  }
  for (const auto& [key, value] : doc.items()) {
    const auto want = [&](bool ok) {
      if (!ok) throw Error(ErrorCode::kSchemaError, "settings key '" + key + "' has wrong type");
    };
    if (key == "workers") {
      want(value.is_number_unsigned());
      s.workers = value.get<int>();
    } else if (key == "log_level") {
      want(value.is_string());
      s.log_level = value.get<std::string>();
    } else if (key == "json") {
      want(value.is_boolean());
      s.json = value.get<bool>();
    } else if (key == "min_chars") {
      want(value.is_number_unsigned());
      s.min_chars = value.get<uint64_t>();
    } else if (key == "shard_bytes") {
      want(value.is_number_unsigned());
      s.shard_bytes = value.get<uint64_t>();
    } else if (key == "accept") {
      want(value.is_string());
      s.accept = value.get<std::string>();
    } else if (key == "memory_budget") {
      want(value.is_number_unsigned());
      s.memory_budget = value.get<uint64_t>();
    } else {
      throw Error(ErrorCode::kSchemaError, "unknown settings key '" + key + "'");
    }
  }
}

void ApplyEnvironment(Settings& s) {
  const auto env = [](const char* name) -> std::optional<std::string> {
    const char* v = std::getenv(name);
    return v ? std::optional<std::string>(v) : std::nullopt;
  };
  if (auto v = env("MF_WORKERS")) s.workers = static_cast<int>(ParseUnsigned(*v, "MF_WORKERS"));
  if (auto v = env("MF_LOG_LEVEL")) s.log_level = *v;
  if (auto v = env("MF_JSON")) s.json = ParseBool(*v, "MF_JSON");
  if (auto v = env("MF_MIN_CHARS")) s.min_chars = ParseUnsigned(*v, "MF_MIN_CHARS");
  if (auto v = env("MF_SHARD_BYTES")) s.shard_bytes = ParseUnsigned(*v, "MF_SHARD_BYTES");
  if (auto v = env("MF_ACCEPT")) s.accept = *v;
  if (auto v = env("MF_MEMORY_BUDGET")) s.memory_budget = ParseUnsigned(*v, "MF_MEMORY_BUDGET");
}

Settings ResolveSettings(const FlagValues& flags) {
  Settings s;
  std::string settings_path = flags.settings_path;
  if (!flags.Given("--settings")) {
    if (const char* v = std::getenv("MF_SETTINGS")) settings_path = v;
  }
  if (!settings_path.empty()) ApplySettingsFile(settings_path, s);
  ApplyEnvironment(s);
  if (flags.Given("--workers")) s.workers = flags.workers;
  if (flags.Given("--log-level")) s.log_level = flags.log_level;
  if (flags.Given("--json")) s.json = flags.json;
  if (flags.Given("--min-chars")) s.min_chars = flags.min_chars;
  if (flags.Given("--shard-bytes")) s.shard_bytes = flags.shard_bytes;
  if (flags.Given("--accept")) s.accept = flags.accept;
  if (flags.Given("--memory-budget")) s.memory_budget = flags.memory_budget;
  if (s.workers < 1) throw Error(ErrorCode::kSchemaError, "workers must be >= 1");
  if (s.shard_bytes == 0) throw Error(ErrorCode::kSchemaError, "shard bytes must be > 0");
  return s;
}

void ConfigureLogging(const std::string& level) {
  const spdlog::level::level_enum parsed = spdlog::level::from_str(level);
  if (parsed == spdlog::level::off && level != "off") {
    throw Error(ErrorCode::kSchemaError, "unknown log level '" + level + "'");
  }
  auto logger = std::make_shared<spdlog::logger>(
      "mf", std::make_shared<spdlog::sinks::stderr_sink_mt>());
  logger->set_level(parsed);
  logger->set_pattern("[%H:%M:%S.%e] [%l] %v");
  spdlog::set_default_logger(std::move(logger));
}

void WriteTextFile(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  out.close();
  if (!out) throw Error(ErrorCode::kIoFailure, "cannot write " + path.string());
}

json ErrorJson(const Error& e) {
  json j = {{"code", std::string(ErrorCodeName(e.code()))}, {"message", e.what()}};
  if (e.code() == ErrorCode::kMissingBaseModel) j["field"] = "base_model";
  return j;
}

json ValidationJson(const std::string& config_path, const ValidationReport& report,
                    const std::vector<Error>& errors) {
  json issues = json::array();
  for (const auto& issue : report.issues) {
    issues.push_back({{"kind", std::string(IssueKindName(issue.kind))},
                      {"tensor", issue.tensor},
                      {"model_index", issue.model_index},
                      {"detail", issue.detail},
                      {"structural", issue.structural()}});
  }
  json error_list = json::array();
  for (const auto& e : errors) error_list.push_back(ErrorJson(e));
  return {{"version", kReportVersion},
          {"config", config_path},
          {"ok", report.ok && errors.empty()},
          {"errors", error_list},
          {"issues", issues}};
}

struct MergeArgs {
  std::string config;
  std::vector<std::string> model_overrides;
  std::string out;
  std::string report;
  bool dry_run = false;
  uint32_t layer_count = 0;
};

struct LoadedInputs {
  MergeConfig config;
  std::optional<ModelSource> base;
  std::vector<ModelSource> models;
};

std::map<std::string, fs::path> ParseOverrides(const std::vector<std::string>& items) {
  std::map<std::string, fs::path> overrides;
  for (const auto& item : items) {
    const size_t eq = item.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == item.size()) {
      throw Error(ErrorCode::kSchemaError, "--model expects NAME=PATH, got '" + item + "'");
    }
    overrides[item.substr(0, eq)] = item.substr(eq + 1);
  }
  return overrides;
}

// Model references resolve through --model overrides, then as paths relative
// to the config file.
LoadedInputs LoadInputs(const MergeArgs& args) {
  LoadedInputs inputs;
  inputs.config = LoadMergeConfig(args.config);
  const auto overrides = ParseOverrides(args.model_overrides);
  const fs::path config_dir = fs::path(args.config).parent_path();
  const auto resolve = [&](const std::string& ref) {
    if (const auto it = overrides.find(ref); it != overrides.end()) return it->second;
    const fs::path p(ref);
    return p.is_absolute() ? p : config_dir / p;
  };
  if (inputs.config.RequiresBase()) {
    const fs::path path = resolve(*inputs.config.base_model);
    spdlog::info("base {} -> {}", *inputs.config.base_model, path.string());
    inputs.base = ModelSource::Open(path);
  }
  for (const auto& entry : inputs.config.models) {
    const fs::path path = resolve(entry.model);
    spdlog::info("model {} -> {}", entry.model, path.string());
    inputs.models.push_back(ModelSource::Open(path));
  }
  return inputs;
}

// Runs validation and reports it. Returns the exit code, or nullopt when a
// merge may proceed.
std::optional<int> Validate(const MergeArgs& args, const Settings& settings, bool report_ok,
                            LoadedInputs* loaded, std::ostream& out, std::ostream& err) {
  ValidationReport report;
  std::vector<Error> errors;
  try {
    *loaded = LoadInputs(args);
    report = ValidateConfig(loaded->config,
                            CollectSpecSets(loaded->config, loaded->base ? &*loaded->base : nullptr,
                                            loaded->models));
  } catch (const Error& e) {
    if (ErrorClassOf(e.code()) != ErrorClass::kValidation) throw;
    errors.push_back(e);
    report.ok = false;
  }
  const json doc = ValidationJson(args.config, report, errors);
  if (!args.report.empty() && (!doc["ok"].get<bool>() || report_ok)) {
    WriteTextFile(args.report, doc.dump(2) + "\n");
  }
  if (doc["ok"].get<bool>() && !report_ok) return std::nullopt;
  if (settings.json) {
    out << doc.dump(2) << "\n";
  } else if (doc["ok"].get<bool>()) {
    out << "config ok: " << report.issues.size() << " note(s)\n";
  }
  for (const auto& e : errors) err << "error: " << e.what() << "\n";
  for (const auto& issue : report.issues) {
    (issue.structural() ? err : out)
        << (issue.structural() ? "invalid: " : "note: ") << IssueKindName(issue.kind) << " "
        << issue.tensor << (issue.detail.empty() ? "" : " (" + issue.detail + ")") << "\n";
  }
  return doc["ok"].get<bool>() ? kExitOk : kExitValidation;
}

int CmdMerge(const MergeArgs& args, const Settings& settings, std::ostream& out,
             std::ostream& err) {
  if (!args.dry_run && args.out.empty()) {
    throw Error(ErrorCode::kSchemaError, "--out is required unless --dry-run is given");
  }
  LoadedInputs inputs;
  if (auto code = Validate(args, settings, args.dry_run, &inputs, out, err)) return *code;

  MergeOptions options;
  options.workers = settings.workers;
  options.memory_budget_bytes = settings.memory_budget;
  if (args.layer_count > 0) options.layer_count = args.layer_count;
  if (fs::path(args.out).has_parent_path()) fs::create_directories(fs::path(args.out).parent_path());
  spdlog::info("merging {} model(s) with {} into {}", inputs.models.size(),
               MergeMethodName(inputs.config.method), args.out);
  const MergeReport report = MergeCheckpoints(
      inputs.config, inputs.base ? &*inputs.base : nullptr, inputs.models, args.out, options);
  const fs::path report_path =
      args.report.empty() ? fs::path(args.out).replace_extension(".report.json")
                          : fs::path(args.report);
  const std::string report_json = MergeReportToJson(report);
  WriteTextFile(report_path, report_json);
  if (settings.json) {
    out << report_json;
  } else {
    out << "merged " << report.tensors_merged << " tensors (" << report.bytes_written
        << " bytes, " << report.workers << " workers) -> " << args.out << "\n";
  }
  return kExitOk;
}

int CmdInspect(const std::string& path, const Settings& settings, std::ostream& out) {
  std::vector<TensorSpec> specs;
  Metadata metadata;
  if (fs::is_regular_file(path) && fs::path(path).extension() != ".json") {
    const CheckpointReader reader = CheckpointReader::Open(path);
    specs = reader.ListTensors();
    metadata = reader.metadata();
  } else {
    const ModelSource source = ModelSource::Open(path);
    for (const auto& [name, spec] : source.index()) specs.push_back(spec);
  }
  uint64_t total = 0;
  for (const auto& spec : specs) total += spec.byte_size();

  if (settings.json) {
    json tensors = json::array();
    for (const auto& spec : specs) {
      tensors.push_back({{"name", spec.name},
                         {"dtype", std::string(DTypeName(spec.dtype))},
                         {"shape", spec.shape},
                         {"data_offsets", {spec.begin, spec.end}},
                         {"bytes", spec.byte_size()}});
    }
    out << json({{"version", kReportVersion},
                 {"path", path},
                 {"metadata", metadata},
                 {"tensors", tensors},
                 {"tensor_count", specs.size()},
                 {"total_bytes", total}})
               .dump(2)
        << "\n";
    return kExitOk;
  }
  size_t name_width = 5;
  for (const auto& spec : specs) name_width = std::max(name_width, spec.name.size());
  char line[64];
  const auto row = [&](const std::string& name, const std::string& dtype, const std::string& shape,
                       uint64_t bytes) {
    std::snprintf(line, sizeof(line), "%12llu", static_cast<unsigned long long>(bytes));
    std::string text = name + std::string(name_width - name.size() + 2, ' ') + dtype +
                       std::string(6 - std::min<size_t>(6, dtype.size()), ' ') + shape;
    text += std::string(text.size() < name_width + 26 ? name_width + 26 - text.size() : 1, ' ');
    out << text << line << "\n";
  };
  out << "name" << std::string(name_width - 2, ' ') << "dtype shape" << std::string(15, ' ')
      << "       bytes\n";
  for (const auto& spec : specs) {
    row(spec.name, std::string(DTypeName(spec.dtype)), ShapeToString(spec.shape),
        spec.byte_size());
  }
  row("total", "", std::to_string(specs.size()) + " tensors", total);
  return kExitOk;
}

bool SameLocation(const fs::path& a, const fs::path& b) {
  std::error_code ec;
  return fs::exists(a, ec) && fs::exists(b, ec) && fs::equivalent(a, b, ec);
}

int CmdClean(const std::string& src, const std::string& dst, const Settings& settings,
             std::ostream& out) {
  PipelinePolicy policy;
  policy.accepted = ParseAcceptedFormats(settings.accept);
  policy.min_chars = settings.min_chars;
  if (SameLocation(src, dst)) {
    throw Error(ErrorCode::kSchemaError, "destination must differ from source");
  }
  LocalDirectorySource source(src);
  JsonlShardWriter sink(dst, settings.shard_bytes);
  spdlog::info("cleaning {} documents from {} with {} workers", source.size(), src,
               settings.workers);
  const PipelineStats stats = RunPipeline(source, sink, policy, settings.workers);
  const std::string stats_json = PipelineStatsToJson(stats);
  WriteTextFile(fs::path(dst) / "stats.json", stats_json);
  if (settings.json) {
    out << stats_json;
  } else {
    out << "read " << stats.read << ", written " << stats.written << ", dropped "
        << stats.dropped_total();
    for (const auto& [reason, count] : stats.dropped) {
      out << (reason == stats.dropped.begin()->first ? " (" : ", ") << DropReasonName(reason)
          << " " << count;
    }
    out << (stats.dropped.empty() ? "" : ")") << " -> " << sink.shards().size()
        << " shard(s) in " << dst << "\n";
  }
  return kExitOk;
}

int CmdMix(const std::string& domain_dir, const std::string& general_dir,
           const std::string& dst, const std::string& ratio_text, const Settings& settings,
           std::ostream& out) {
  const MixRatio ratio = ParseMixRatio(ratio_text);
  if (SameLocation(domain_dir, dst) || SameLocation(general_dir, dst)) {
    throw Error(ErrorCode::kSchemaError, "destination must differ from the inputs");
  }
  for (const auto& dir : {domain_dir, general_dir}) {
    if (!fs::is_directory(dir)) throw Error(ErrorCode::kIoFailure, dir + " is not a directory");
  }
  JsonlShardReader domain(domain_dir);
  JsonlShardReader general(general_dir);
  JsonlShardWriter sink(dst, settings.shard_bytes);
  const MixSummary summary = MixCorpora(
      [&] { return domain.Next(); }, [&] { return general.Next(); }, ratio, EstimateTokens,
      [&](const MixedDocument& doc) { sink.Write(doc.record); });
  sink.Finish();
  const uint64_t total = summary.domain_tokens + summary.general_tokens;
  const json doc = {{"version", kReportVersion},
                    {"ratio", ratio_text},
                    {"domain_tokens", summary.domain_tokens},
                    {"general_tokens", summary.general_tokens},
                    {"domain_docs", summary.domain_docs},
                    {"general_docs", summary.general_docs},
                    {"domain_fraction",
                     total == 0 ? 0.0 : double(summary.domain_tokens) / double(total)}};
  WriteTextFile(fs::path(dst) / "mix_stats.json", doc.dump(2) + "\n");
  if (settings.json) {
    out << doc.dump(2) << "\n";
  } else {
    out << "mixed " << summary.domain_docs << " domain + " << summary.general_docs
        << " general documents (" << summary.domain_tokens << ":" << summary.general_tokens
        << " tokens) -> " << dst << "\n";
  }
  return kExitOk;
}

struct PplArgs {
  std::vector<std::string> inputs;
  std::string csv;
  std::string svg;
  std::string report;
};

int CmdPpl(const PplArgs& args, const Settings& settings, std::ostream& out) {
  std::vector<PerplexityReport> reports;
  for (const auto& path : args.inputs) {
    reports.push_back(Perplexity(LoadNllFile(path)));
    spdlog::info("{}: {} tokens, ppl {}", path, reports.back().token_count,
                 reports.back().perplexity);
  }
  const ComparisonTable table = CompareVariants(reports);
  if (!args.csv.empty()) WriteTextFile(args.csv, RenderTable(table, TableFormat::kCsv));
  if (!args.svg.empty()) WriteTextFile(args.svg, RenderTable(table, TableFormat::kSvgBars));
  const std::string reports_json = PerplexityReportsToJson(reports);
  if (!args.report.empty()) WriteTextFile(args.report, reports_json);
  out << (settings.json ? reports_json : RenderTable(table, TableFormat::kText));
  return kExitOk;
}

}  // namespace

int RunCli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Checkpoint merging, corpus preparation and perplexity tooling.", "mf"};
  app.set_version_flag("--version", "mf 0.1.0");
  app.require_subcommand(1);
  app.fallthrough();

  FlagValues flags;
  flags.given["--settings"] =
      app.add_option("--settings", flags.settings_path, "JSON settings file (MF_SETTINGS)");
  flags.given["--workers"] =
      app.add_option("--workers", flags.workers, "Worker threads (MF_WORKERS)")
          ->check(CLI::PositiveNumber);
  flags.given["--log-level"] = app.add_option(
      "--log-level", flags.log_level, "trace, debug, info, warn, error or off (MF_LOG_LEVEL)");
  flags.given["--json"] = app.add_flag("--json", flags.json, "Print JSON reports (MF_JSON)");

  MergeArgs merge_args;
  CLI::App* merge = app.add_subcommand("merge", "Merge checkpoints from a YAML recipe");
  merge->add_option("config", merge_args.config, "Merge recipe")->required();
  merge->add_option("--model", merge_args.model_overrides,
                    "NAME=PATH for a model named in the recipe");
  merge->add_option("--out", merge_args.out, "Output container");
  merge->add_option("--report", merge_args.report,
                    "Report file (default: next to the output)");
  merge->add_flag("--dry-run", merge_args.dry_run, "Validate only");
  merge->add_option("--layer-count", merge_args.layer_count,
                    "Override the inferred layer count");
  flags.given["--memory-budget"] = merge->add_option(
      "--memory-budget", flags.memory_budget, "Bytes of working memory (MF_MEMORY_BUDGET)");

  std::string inspect_path;
  CLI::App* inspect = app.add_subcommand("inspect", "List the tensors of a container");
  inspect->add_option("path", inspect_path, "Container, shard index or directory")->required();

  MergeArgs validate_args;
  CLI::App* validate = app.add_subcommand("validate", "Check a recipe against its models");
  validate->add_option("config", validate_args.config, "Merge recipe")->required();
  validate->add_option("--model", validate_args.model_overrides, "NAME=PATH");
  validate->add_option("--report", validate_args.report, "Write the report to a file");

  std::string clean_src, clean_dst;
  CLI::App* clean = app.add_subcommand("clean", "Extract, clean and shard a document tree");
  clean->add_option("src", clean_src, "Input directory")->required();
  clean->add_option("dst", clean_dst, "Output directory")->required();
  flags.given["--accept"] =
      clean->add_option("--accept", flags.accept, "Accepted formats (MF_ACCEPT)");
  flags.given["--min-chars"] =
      clean->add_option("--min-chars", flags.min_chars, "Minimum characters (MF_MIN_CHARS)");
  flags.given["--shard-bytes"] = app.add_option("--shard-bytes", flags.shard_bytes,
                                                "Maximum shard size (MF_SHARD_BYTES)");

  std::string mix_domain, mix_general, mix_dst, mix_ratio;
  CLI::App* mix = app.add_subcommand("mix", "Interleave domain and general shards");
  mix->add_option("domain", mix_domain, "Domain shard directory")->required();
  mix->add_option("general", mix_general, "General shard directory")->required();
  mix->add_option("dst", mix_dst, "Output directory")->required();
  mix->add_option("--ratio", mix_ratio, "Token ratio D:G, e.g. 70:1")->required();

  PplArgs ppl_args;
  CLI::App* ppl = app.add_subcommand("ppl", "Perplexity table from NLL files");
  ppl->add_option("--in", ppl_args.inputs, "NLL files")->required()->expected(1, -1);
  ppl->add_option("--out", ppl_args.csv, "CSV table");
  ppl->add_option("--svg", ppl_args.svg, "SVG bar chart");
  ppl->add_option("--report", ppl_args.report, "JSON reports");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitValidation;
  }

  bool json_errors = flags.json;
  try {
    const Settings settings = ResolveSettings(flags);
    json_errors = settings.json;
    ConfigureLogging(settings.log_level);
    if (merge->parsed()) return CmdMerge(merge_args, settings, out, err);
    if (inspect->parsed()) return CmdInspect(inspect_path, settings, out);
    if (validate->parsed()) {
      LoadedInputs inputs;
      return *Validate(validate_args, settings, true, &inputs, out, err);
    }
    if (clean->parsed()) return CmdClean(clean_src, clean_dst, settings, out);
    if (mix->parsed()) return CmdMix(mix_domain, mix_general, mix_dst, mix_ratio, settings, out);
    if (ppl->parsed()) return CmdPpl(ppl_args, settings, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    if (json_errors) {
      out << json({{"version", kReportVersion}, {"ok", false}, {"error", ErrorJson(e)}}).dump(2)
          << "\n";
    }
    return ErrorClassOf(e.code()) == ErrorClass::kValidation ? kExitValidation : kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitValidation;
}

}  // namespace mf::cli
