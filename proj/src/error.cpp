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

#include "embfuse/error.hpp"

namespace embfuse {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid-argument";
    case ErrorCode::kInvalidConfig: return "invalid-config";
    case ErrorCode::kUnknownCommand: return "unknown-command";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kEmptyInput: return "empty-input";
    case ErrorCode::kEmptyTable: return "empty-table";
    case ErrorCode::kDimMismatch: return "dim-mismatch";
    case ErrorCode::kParseFloat: return "parse-float";
    case ErrorCode::kNonFinite: return "non-finite";
    case ErrorCode::kBadHeader: return "bad-header";
    case ErrorCode::kTruncatedRecord: return "truncated-record";
    case ErrorCode::kMissingColumn: return "missing-column";
    case ErrorCode::kEmptyFile: return "empty-file";
    case ErrorCode::kOutOfRange: return "out-of-range";
    case ErrorCode::kTooFewExamples: return "too-few-examples";
    case ErrorCode::kEmptyDictionaries: return "empty-dictionaries";
    case ErrorCode::kShapeMismatch: return "shape-mismatch";
    case ErrorCode::kIndexOutOfRange: return "index-out-of-range";
    case ErrorCode::kNonFiniteGradient: return "non-finite-gradient";
    case ErrorCode::kEmptyDataset: return "empty-dataset";
    case ErrorCode::kAllDiverged: return "all-diverged";
    case ErrorCode::kEmptySeries: return "empty-series";
    case ErrorCode::kBadFormat: return "bad-format";
  }
  return "unknown";
}

bool is_validation_error(ErrorCode code) {
  return code == ErrorCode::kInvalidArgument ||
         code == ErrorCode::kInvalidConfig ||
         code == ErrorCode::kUnknownCommand;
}

}  // namespace embfuse
