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

#include "mergeforge/error.h"

namespace mf {

std::string_view ErrorCodeName(ErrorCode code) {
  switch (code) {
    case ErrorCode::kMalformedHeader: return "MalformedHeader";
    case ErrorCode::kOffsetOverlap: return "OffsetOverlap";
    case ErrorCode::kTruncatedFile: return "TruncatedFile";
    case ErrorCode::kUnknownTensor: return "UnknownTensor";
    case ErrorCode::kDuplicateName: return "DuplicateName";
    case ErrorCode::kIoFailure: return "IoFailure";
    case ErrorCode::kSyntaxError: return "SyntaxError";
    case ErrorCode::kUnknownMethod: return "UnknownMethod";
    case ErrorCode::kMissingBaseModel: return "MissingBaseModel";
    case ErrorCode::kSchemaError: return "SchemaError";
    case ErrorCode::kNoApplicableRule: return "NoApplicableRule";
    case ErrorCode::kValidationFailed: return "ValidationFailed";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kZeroWeightSum: return "ZeroWeightSum";
    case ErrorCode::kNonFiniteValue: return "NonFiniteValue";
    case ErrorCode::kNotHtml: return "NotHtml";
    case ErrorCode::kEmptyStream: return "EmptyStream";
    case ErrorCode::kMalformedFile: return "MalformedFile";
    case ErrorCode::kNegativeValue: return "NegativeValue";
    case ErrorCode::kDuplicateCell: return "DuplicateCell";
  }
  return "Unknown";
}

ErrorClass ErrorClassOf(ErrorCode code) {
  switch (code) {
    case ErrorCode::kSyntaxError:
    case ErrorCode::kUnknownMethod:
    case ErrorCode::kMissingBaseModel:
    case ErrorCode::kSchemaError:
    case ErrorCode::kNoApplicableRule:
    case ErrorCode::kValidationFailed:
      return ErrorClass::kValidation;
    default:
      return ErrorClass::kRuntime;
  }
}

}  // namespace mf
