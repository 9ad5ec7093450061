/*
 * Copyright 2026 The avibench Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace avibench {

enum class ErrorCode {
  kInvalidArgument = 1,
  kIo,
  kFormat,
  kUnsupported,
  kUndefinedMetric,
  kInsufficientData,
  kConfigMismatch,
  kRateLimited,
  kUnauthorized,
  kValidation,
  kPhase,
  kNotFound,
};

inline std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kFormat: return "format";
    case ErrorCode::kUnsupported: return "unsupported";
    case ErrorCode::kUndefinedMetric: return "undefined_metric";
    case ErrorCode::kInsufficientData: return "insufficient_data";
    case ErrorCode::kConfigMismatch: return "config_mismatch";
    case ErrorCode::kRateLimited: return "rate_limited";
    case ErrorCode::kUnauthorized: return "unauthorized";
    case ErrorCode::kValidation: return "validation";
    case ErrorCode::kPhase: return "phase";
    case ErrorCode::kNotFound: return "not_found";
  }
  return "unknown";
}

// Every module reports failures with this exception; the CLI maps the code to
// its exit status and the service maps it to an HTTP status.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace avibench
