// Copyright 2026 The qcg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace qcg {

enum class ErrorKind {
  dimension,
  empty_input,
  parameter,
  inconsistency,
  overflow_risk,
  missing_calibration,
  input,
  lookup,
  io,
  parse,
  bad_magic,
  bad_version,
  truncated,
  shape_mismatch,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::dimension: return "dimension";
    case ErrorKind::empty_input: return "empty-input";
    case ErrorKind::parameter: return "parameter";
    case ErrorKind::inconsistency: return "inconsistency";
    case ErrorKind::overflow_risk: return "overflow-risk";
    case ErrorKind::missing_calibration: return "missing-calibration";
    case ErrorKind::input: return "input";
    case ErrorKind::lookup: return "lookup";
    case ErrorKind::io: return "io";
    case ErrorKind::parse: return "parse";
    case ErrorKind::bad_magic: return "magic-mismatch";
    case ErrorKind::bad_version: return "version-mismatch";
    case ErrorKind::truncated: return "truncated";
    case ErrorKind::shape_mismatch: return "shape-mismatch";
  }
  return "unknown";
}

/// Every failure raised by the library. The kind is stable and is what the
/// CLI maps to exit codes; the message is for humans.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) throw Error(kind, message);
}

}  // namespace qcg
