// Copyright 2026 The hessdag Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "hessdag/error.hpp"

namespace hessdag {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kDimensionMismatch: return "dimension-mismatch";
    case ErrorCode::kCycleDetected: return "cycle-detected";
    case ErrorCode::kDanglingParent: return "dangling-parent";
    case ErrorCode::kMultipleOutputs: return "multiple-outputs";
    case ErrorCode::kMissingOutput: return "missing-output";
    case ErrorCode::kUnknownNode: return "unknown-node";
    case ErrorCode::kInvalidArgument: return "invalid-argument";
    case ErrorCode::kUnsupportedOperation: return "unsupported-operation";
    case ErrorCode::kNotAChain: return "not-a-chain";
    case ErrorCode::kInsufficientData: return "insufficient-data";
    case ErrorCode::kCapExceeded: return "cap-exceeded";
    case ErrorCode::kKinkProximity: return "kink-proximity";
    case ErrorCode::kNonFiniteValue: return "non-finite-value";
    case ErrorCode::kDiverged: return "diverged";
    case ErrorCode::kConfigError: return "config-error";
    case ErrorCode::kIoError: return "io-error";
    case ErrorCode::kInternal: return "internal";
  }
  return "unknown";
}

}  // namespace hessdag
