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

#ifndef MERGEFORGE_ERROR_H_
#define MERGEFORGE_ERROR_H_

#include <stdexcept>
#include <string>
#include <string_view>

namespace mf {

// Every failure raised by the library carries one of these codes. The CLI maps
// them onto exit-code classes (see ErrorClassOf).
enum class ErrorCode {
  // checkpoint-store
  kMalformedHeader,
  kOffsetOverlap,
  kTruncatedFile,
  kUnknownTensor,
  kDuplicateName,
  kIoFailure,
  // merge-config
  kSyntaxError,
  kUnknownMethod,
  kMissingBaseModel,
  kSchemaError,
  kNoApplicableRule,
  kValidationFailed,
  // merge-core
  kShapeMismatch,
  kZeroWeightSum,
  kNonFiniteValue,
  // corpus-pipeline
  kNotHtml,
  // eval-harness
  kEmptyStream,
  kMalformedFile,
  kNegativeValue,
  kDuplicateCell,
};

std::string_view ErrorCodeName(ErrorCode code);

enum class ErrorClass { kValidation, kRuntime };

// Configuration and schema problems are validation failures; everything that
// concerns the data being processed or the environment is a runtime error.
ErrorClass ErrorClassOf(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(ErrorCodeName(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace mf

#endif  // MERGEFORGE_ERROR_H_
