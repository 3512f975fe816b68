#pragma once

// SPDX-License-Identifier: Apache-2.0

#include <stdexcept>
#include <string>

namespace ppldecode {

/// Error categories surfaced by the library. The CLI maps each to a
/// distinct process exit code.
enum class ErrorKind {
  kInvalidInput,
  kValidation,
  kConfiguration,
  kModelUnavailable,
  kProtocolViolation,
  kDecodingStuck,
  kOracleLimit,
  kIo,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidInput: return "invalid-input";
    case ErrorKind::kValidation: return "validation";
    case ErrorKind::kConfiguration: return "configuration";
    case ErrorKind::kModelUnavailable: return "model-unavailable";
    case ErrorKind::kProtocolViolation: return "protocol-violation";
    case ErrorKind::kDecodingStuck: return "decoding-stuck";
    case ErrorKind::kOracleLimit: return "oracle-limit";
    case ErrorKind::kIo: return "io";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what),
        kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

}  // namespace ppldecode
