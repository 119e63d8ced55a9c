/* Copyright 2026 The embfuse Authors. All Rights Reserved.

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

#ifndef EMBFUSE_ERROR_HPP_
#define EMBFUSE_ERROR_HPP_

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace embfuse {

enum class ErrorCode {
  // Argument and configuration validation (CLI exit code 1).
  kInvalidArgument,
  kInvalidConfig,
  kUnknownCommand,
  // Input and runtime failures (CLI exit code 2).
  kIo,
  kEmptyInput,
  kEmptyTable,
  kDimMismatch,
  kParseFloat,
  kNonFinite,
  kBadHeader,
  kTruncatedRecord,
  kMissingColumn,
  kEmptyFile,
  kOutOfRange,
  kTooFewExamples,
  kEmptyDictionaries,
  kShapeMismatch,
  kIndexOutOfRange,
  kNonFiniteGradient,
  kEmptyDataset,
  kAllDiverged,
  kEmptySeries,
  kBadFormat,
};

/// Stable kebab-case name used in `ERROR <code>: <message>` lines.
std::string_view error_code_name(ErrorCode code);

/// True for codes that signal bad user input rather than a runtime failure.
bool is_validation_error(ErrorCode code);

/// The single exception type thrown across the library. `detail` carries
/// the numeric payload of positional errors (line number, record number,
/// expected count), or -1 when not applicable.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, std::int64_t detail = -1)
      : std::runtime_error(message), code_(code), detail_(detail) {}

  ErrorCode code() const noexcept { return code_; }
  std::int64_t detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::int64_t detail_;
};

}  // namespace embfuse

#endif  // EMBFUSE_ERROR_HPP_
