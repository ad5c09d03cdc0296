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

#include "mergeforge/merge_config.h"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <set>

#include "mergeforge/error.h"

namespace mf {

namespace {

[[noreturn]] void SchemaFail(const std::string& message) {
  throw Error(ErrorCode::kSchemaError, message);
}

void RejectUnknownKeys(const YAML::Node& map, const std::string& where,
                       std::initializer_list<std::string_view> allowed) {
  for (const auto& item : map) {
    const std::string key = item.first.as<std::string>();
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      SchemaFail(where + ": unknown key '" + key + "'");
    }
  }
}

double ParseNumber(const YAML::Node& node, const std::string& where) {
  if (!node.IsScalar()) SchemaFail(where + ": expected a number");
  double value = 0;
  try {
    value = node.as<double>();
  } catch (const YAML::Exception&) {
    SchemaFail(where + ": '" + node.Scalar() + "' is not a number");
  }
  if (!std::isfinite(value)) SchemaFail(where + ": value must be finite");
  return value;
}

bool ParseBool(const YAML::Node& node, const std::string& where) {
  try {
    return node.as<bool>();
  } catch (const YAML::Exception&) {
    SchemaFail(where + ": expected true or false");
  }
}

std::vector<double> ParseAnchors(const YAML::Node& node,
                                 const std::string& where) {
  std::vector<double> anchors;
  if (node.IsSequence()) {
    for (const auto& item : node) anchors.push_back(ParseNumber(item, where));
  } else {
    anchors.push_back(ParseNumber(node, where));
  }
  return anchors;
}

ParameterSchedule ParseSchedule(const YAML::Node& node,
                                const std::string& where) {
  if (node.IsScalar()) {
    return ParameterSchedule::Constant(ParseNumber(node, where));
  }
  if (!node.IsSequence()) SchemaFail(where + ": expected number or list");
  const bool all_scalars = std::all_of(
      node.begin(), node.end(), [](const YAML::Node& n) { return n.IsScalar(); });
  if (all_scalars && node.size() > 0) {
    return ParameterSchedule({ScheduleRule{std::nullopt, ParseAnchors(node, where)}});
  }
  std::vector<ScheduleRule> rules;
  for (const auto& item : node) {
    if (!item.IsMap()) SchemaFail(where + ": rule must be a mapping");
    RejectUnknownKeys(item, where, {"filter", "value"});
    ScheduleRule rule;
    if (item["filter"]) {
      if (!item["filter"].IsScalar()) SchemaFail(where + ": filter must be text");
      rule.filter = item["filter"].as<std::string>();
    }
    if (!item["value"]) SchemaFail(where + ": rule without value");
    rule.anchors = ParseAnchors(item["value"], where);
    rules.push_back(std::move(rule));
  }
  return ParameterSchedule(std::move(rules));
}

std::optional<DType> ParseConfigDType(std::string_view name) {
  if (name == "bfloat16") return DType::kBF16;
  if (name == "float16") return DType::kF16;
  if (name == "float32") return DType::kF32;
  return std::nullopt;
}

std::string_view ConfigDTypeName(DType dtype) {
  switch (dtype) {
    case DType::kBF16: return "bfloat16";
    case DType::kF16: return "float16";
    case DType::kF32: return "float32";
  }
  return "float32";
}

std::string FormatNumber(double value) {
  char buf[32];
  const auto result = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, result.ptr);
}

void EmitAnchors(YAML::Emitter& out, const std::vector<double>& anchors) {
  if (anchors.size() == 1) {
    out << FormatNumber(anchors.front());
    return;
  }
  out << YAML::Flow << YAML::BeginSeq;
  for (double a : anchors) out << FormatNumber(a);
  out << YAML::EndSeq;
}

void EmitSchedule(YAML::Emitter& out, const ParameterSchedule& schedule) {
  const auto& rules = schedule.rules();
  if (rules.size() == 1 && !rules.front().filter &&
      rules.front().anchors.size() == 1) {
    out << FormatNumber(rules.front().anchors.front());
    return;
  }
  out << YAML::BeginSeq;
  for (const auto& rule : rules) {
    out << YAML::BeginMap;
    if (rule.filter) out << YAML::Key << "filter" << YAML::Value << *rule.filter;
    out << YAML::Key << "value" << YAML::Value;
    EmitAnchors(out, rule.anchors);
    out << YAML::EndMap;
  }
  out << YAML::EndSeq;
}

// Interpolation at a position measured in anchor units, x in [0, n-1].
double InterpolateAtPosition(std::span<const double> anchors, double x) {
  const size_t n = anchors.size();
  if (n == 1) return anchors.front();
  x = std::clamp(x, 0.0, static_cast<double>(n - 1));
  const size_t j = std::min(static_cast<size_t>(std::floor(x)), n - 2);
  const double frac = x - static_cast<double>(j);
  if (frac == 0.0) return anchors[j];
  if (frac == 1.0) return anchors[j + 1];
  return (1.0 - frac) * anchors[j] + frac * anchors[j + 1];
}

}  // namespace

std::string_view MergeMethodName(MergeMethod method) {
  switch (method) {
    case MergeMethod::kTies: return "ties";
    case MergeMethod::kLinear: return "linear";
    case MergeMethod::kSlerp: return "slerp";
    case MergeMethod::kDareTies: return "dare_ties";
    case MergeMethod::kDareLinear: return "dare_linear";
  }
  return "?";
}

std::optional<MergeMethod> ParseMergeMethod(std::string_view name) {
  for (MergeMethod m : {MergeMethod::kTies, MergeMethod::kLinear,
                        MergeMethod::kSlerp, MergeMethod::kDareTies,
                        MergeMethod::kDareLinear}) {
    if (MergeMethodName(m) == name) return m;
  }
  return std::nullopt;
}

ParameterSchedule::ParameterSchedule(std::vector<ScheduleRule> rules)
    : rules_(std::move(rules)) {
  int defaults = 0;
  for (const auto& rule : rules_) {
    if (rule.anchors.empty()) SchemaFail("schedule rule has no anchors");
    if (!rule.filter) ++defaults;
  }
  if (defaults > 1) SchemaFail("schedule has more than one rule without a filter");
}

ParameterSchedule ParameterSchedule::Constant(double value) {
  return ParameterSchedule({ScheduleRule{std::nullopt, {value}}});
}

const ScheduleRule* ParameterSchedule::Match(std::string_view tensor_name) const {
  for (const auto& rule : rules_) {
    if (rule.filter && tensor_name.find(*rule.filter) != std::string_view::npos) {
      return &rule;
    }
  }
  for (const auto& rule : rules_) {
    if (!rule.filter) return &rule;
  }
  return nullptr;
}

bool MergeConfig::RequiresBase() const {
  return method == MergeMethod::kTies || method == MergeMethod::kDareTies ||
         method == MergeMethod::kDareLinear;
}

MergeConfig ParseMergeConfig(std::string_view text) {
  YAML::Node root;
  try {
    root = YAML::Load(std::string(text));
  } catch (const YAML::Exception& e) {
    throw Error(ErrorCode::kSyntaxError, e.what());
  }
  if (!root.IsMap()) SchemaFail("config must be a mapping");
  RejectUnknownKeys(root, "config",
                    {"merge_method", "base_model", "models", "parameters", "dtype"});

  MergeConfig config;
  if (!root["merge_method"] || !root["merge_method"].IsScalar()) {
    SchemaFail("merge_method is required");
  }
  const std::string method = root["merge_method"].as<std::string>();
  const auto parsed_method = ParseMergeMethod(method);
  if (!parsed_method) {
    throw Error(ErrorCode::kUnknownMethod, "merge_method '" + method + "'");
  }
  config.method = *parsed_method;

  if (root["base_model"]) {
    if (!root["base_model"].IsScalar()) SchemaFail("base_model must be text");
    config.base_model = root["base_model"].as<std::string>();
  }

  const YAML::Node models = root["models"];
  if (!models || !models.IsSequence() || models.size() == 0) {
    SchemaFail("models must be a non-empty list");
  }
  for (size_t i = 0; i < models.size(); ++i) {
    const YAML::Node item = models[i];
    const std::string where = "models[" + std::to_string(i) + "]";
    if (!item.IsMap()) SchemaFail(where + ": expected a mapping");
    RejectUnknownKeys(item, where, {"model", "parameters"});
    if (!item["model"] || !item["model"].IsScalar()) {
      SchemaFail(where + ": model is required");
    }
    ModelEntry entry;
    entry.model = item["model"].as<std::string>();
    if (const YAML::Node params = item["parameters"]) {
      if (!params.IsMap()) SchemaFail(where + ".parameters: expected a mapping");
      RejectUnknownKeys(params, where + ".parameters", {"weight", "density"});
      if (params["weight"]) {
        entry.weight = ParseSchedule(params["weight"], where + ".weight");
      }
      if (params["density"]) {
        entry.density = ParseSchedule(params["density"], where + ".density");
        for (const auto& rule : entry.density.rules()) {
          for (double d : rule.anchors) {
            if (!(d > 0.0 && d <= 1.0)) {
              SchemaFail(where + ".density: " + FormatNumber(d) +
                         " outside (0, 1]");
            }
          }
        }
      }
    }
    config.models.push_back(std::move(entry));
  }

  if (const YAML::Node params = root["parameters"]) {
    if (!params.IsMap()) SchemaFail("parameters: expected a mapping");
    RejectUnknownKeys(params, "parameters", {"normalize", "int8_mask", "t", "seed"});
    if (params["normalize"]) {
      config.normalize = ParseBool(params["normalize"], "parameters.normalize");
    }
    if (params["int8_mask"]) {
      config.int8_mask = ParseBool(params["int8_mask"], "parameters.int8_mask");
    }
    if (params["t"]) {
      config.t = ParseNumber(params["t"], "parameters.t");
      if (*config.t < 0.0 || *config.t > 1.0) SchemaFail("parameters.t outside [0, 1]");
    }
    if (params["seed"]) {
      try {
        config.seed = params["seed"].as<uint64_t>();
      } catch (const YAML::Exception&) {
        SchemaFail("parameters.seed must be a non-negative integer");
      }
    }
  }

  if (root["dtype"]) {
    const std::string name = root["dtype"].as<std::string>();
    const auto dtype = ParseConfigDType(name);
    if (!dtype) SchemaFail("dtype '" + name + "' (expected bfloat16, float16 or float32)");
    config.out_dtype = *dtype;
  }

  if (config.RequiresBase()) {
    if (!config.base_model) {
      throw Error(ErrorCode::kMissingBaseModel,
                  "base_model is required for merge_method " + method);
    }
    for (const auto& entry : config.models) {
      if (entry.model == *config.base_model) {
        SchemaFail("model '" + entry.model + "' is also the base_model");
      }
    }
  }
  if (config.method == MergeMethod::kSlerp) {
    if (config.models.size() != 2) SchemaFail("slerp needs exactly 2 models");
    if (!config.t) SchemaFail("slerp needs parameters.t");
  }
  return config;
}

MergeConfig LoadMergeConfig(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoFailure, "cannot read " + path.string());
  const std::string text(std::istreambuf_iterator<char>(in), {});
  return ParseMergeConfig(text);
}

std::string SerializeMergeConfig(const MergeConfig& config) {
  YAML::Emitter out;
  out << YAML::BeginMap;
  out << YAML::Key << "merge_method" << YAML::Value
      << std::string(MergeMethodName(config.method));
  if (config.base_model) {
    out << YAML::Key << "base_model" << YAML::Value << *config.base_model;
  }
  out << YAML::Key << "models" << YAML::Value << YAML::BeginSeq;
  for (const auto& entry : config.models) {
    out << YAML::BeginMap;
    out << YAML::Key << "model" << YAML::Value << entry.model;
    out << YAML::Key << "parameters" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "weight" << YAML::Value;
    EmitSchedule(out, entry.weight);
    out << YAML::Key << "density" << YAML::Value;
    EmitSchedule(out, entry.density);
    out << YAML::EndMap << YAML::EndMap;
  }
  out << YAML::EndSeq;
  out << YAML::Key << "parameters" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "normalize" << YAML::Value << config.normalize;
  out << YAML::Key << "int8_mask" << YAML::Value << config.int8_mask;
  if (config.t) out << YAML::Key << "t" << YAML::Value << FormatNumber(*config.t);
  if (config.seed) out << YAML::Key << "seed" << YAML::Value << *config.seed;
  out << YAML::EndMap;
  out << YAML::Key << "dtype" << YAML::Value
      << std::string(ConfigDTypeName(config.out_dtype));
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

std::optional<uint32_t> ExtractLayerIndex(std::string_view tensor_name) {
  constexpr std::string_view kSegment = "layers.";
  size_t pos = 0;
  while ((pos = tensor_name.find(kSegment, pos)) != std::string_view::npos) {
    const bool at_segment_start = pos == 0 || tensor_name[pos - 1] == '.';
    const size_t digits_begin = pos + kSegment.size();
    size_t digits_end = digits_begin;
    while (digits_end < tensor_name.size() &&
           std::isdigit(static_cast<unsigned char>(tensor_name[digits_end]))) {
      ++digits_end;
    }
    const bool segment_ends =
        digits_end == tensor_name.size() || tensor_name[digits_end] == '.';
    if (at_segment_start && digits_end > digits_begin && segment_ends) {
      uint32_t value = 0;
      const auto result = std::from_chars(tensor_name.data() + digits_begin,
                                          tensor_name.data() + digits_end, value);
      if (result.ec == std::errc()) return value;
    }
    pos = digits_begin;
  }
  return std::nullopt;
}

uint32_t InferLayerCount(const SpecIndex& index) {
  uint32_t count = 1;
  for (const auto& [name, spec] : index) {
    if (const auto layer = ExtractLayerIndex(name)) {
      count = std::max(count, *layer + 1);
    }
  }
  return count;
}

double InterpolateAnchors(std::span<const double> anchors, double fraction) {
  if (anchors.empty()) SchemaFail("empty anchor list");
  return InterpolateAtPosition(
      anchors, std::clamp(fraction, 0.0, 1.0) * static_cast<double>(anchors.size() - 1));
}

double LayerFraction(std::string_view tensor_name, uint32_t layer_count) {
  if (const auto layer = ExtractLayerIndex(tensor_name)) {
    if (layer_count <= 1) return 0.0;
    return std::min(1.0, static_cast<double>(*layer) / (layer_count - 1));
  }
  return tensor_name.find("embed") != std::string_view::npos ? 0.0 : 1.0;
}

double ResolveParameter(const ParameterSchedule& schedule,
                        std::string_view tensor_name, uint32_t layer_count) {
  const ScheduleRule* rule = schedule.Match(tensor_name);
  if (rule == nullptr) {
    throw Error(ErrorCode::kNoApplicableRule,
                "no rule matches '" + std::string(tensor_name) + "'");
  }
  const auto& anchors = rule->anchors;
  const auto layer = ExtractLayerIndex(tensor_name);
  if (layer && layer_count > 1 && anchors.size() > 1) {
    // Position in anchor units computed with a single rounding, so layers
    // that coincide with an anchor hit it exactly.
    const double x = static_cast<double>(std::min(*layer, layer_count - 1)) *
                     static_cast<double>(anchors.size() - 1) /
                     static_cast<double>(layer_count - 1);
    return InterpolateAtPosition(anchors, x);
  }
  return InterpolateAnchors(anchors, LayerFraction(tensor_name, layer_count));
}

std::string_view IssueKindName(ValidationIssue::Kind kind) {
  switch (kind) {
    case ValidationIssue::Kind::kMissingTensor: return "MissingTensor";
    case ValidationIssue::Kind::kShapeMismatch: return "ShapeMismatch";
    case ValidationIssue::Kind::kNoApplicableRule: return "NoApplicableRule";
    case ValidationIssue::Kind::kModelCountMismatch: return "ModelCountMismatch";
    case ValidationIssue::Kind::kDtypeNote: return "DtypeNote";
    case ValidationIssue::Kind::kExtraTensor: return "ExtraTensor";
  }
  return "?";
}

ValidationReport ValidateConfig(const MergeConfig& config,
                                std::span<const SpecIndex> spec_sets) {
  using Kind = ValidationIssue::Kind;
  ValidationReport report;
  const size_t base_slots = config.RequiresBase() ? 1 : 0;
  if (spec_sets.size() != base_slots + config.models.size()) {
    report.issues.push_back({Kind::kModelCountMismatch, "", -1,
                             "expected " +
                                 std::to_string(base_slots + config.models.size()) +
                                 " spec sets, got " +
                                 std::to_string(spec_sets.size())});
    report.ok = false;
    return report;
  }

  const SpecIndex& reference = spec_sets.front();
  const int reference_model = base_slots ? -1 : 0;
  for (size_t m = 0; m < config.models.size(); ++m) {
    const SpecIndex& model = spec_sets[base_slots + m];
    const int model_index = static_cast<int>(m);
    for (const auto& [name, ref_spec] : reference) {
      const ModelEntry& entry = config.models[m];
      if (!entry.weight.Match(name)) {
        report.issues.push_back({Kind::kNoApplicableRule, name, model_index,
                                 "weight schedule has no matching rule"});
      }
      if (!entry.density.Match(name)) {
        report.issues.push_back({Kind::kNoApplicableRule, name, model_index,
                                 "density schedule has no matching rule"});
      }
      if (model_index == reference_model) continue;
      const auto it = model.find(name);
      if (it == model.end()) {
        report.issues.push_back({Kind::kMissingTensor, name, model_index,
                                 "present in reference, absent in model"});
        continue;
      }
      if (it->second.shape != ref_spec.shape) {
        report.issues.push_back(
            {Kind::kShapeMismatch, name, model_index,
             ShapeToString(ref_spec.shape) + " vs " +
                 ShapeToString(it->second.shape)});
      }
      if (it->second.dtype != ref_spec.dtype) {
        report.issues.push_back(
            {Kind::kDtypeNote, name, model_index,
             std::string(DTypeName(ref_spec.dtype)) + " vs " +
                 std::string(DTypeName(it->second.dtype))});
      }
    }
    if (model_index == reference_model) continue;
    for (const auto& [name, spec] : model) {
      if (!reference.contains(name)) {
        report.issues.push_back({Kind::kExtraTensor, name, model_index,
                                 "not in reference; ignored"});
      }
    }
  }
  report.ok = std::none_of(report.issues.begin(), report.issues.end(),
                           [](const ValidationIssue& i) { return i.structural(); });
  return report;
}

}  // namespace mf
