#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace fedhp {

/// Rejected input: shapes, ranges, or preconditions violated by the caller.
struct InvalidInput : std::runtime_error {
  explicit InvalidInput(const std::string& msg) : std::runtime_error(msg) {}
};

/// Non-finite value produced where the contract requires finite results.
struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

/// File / container failures. The kind disambiguates the error classes the
/// tensor container distinguishes (bad magic, truncation, extent overflow).
struct IoError : std::runtime_error {
  enum class Kind {
    open_failed,
    bad_magic,
    truncated,
    extent_overflow,
    size_mismatch,
    bad_manifest,
  };
  Kind kind;
  IoError(Kind k, const std::string& msg) : std::runtime_error(msg), kind(k) {}
};

/// Configuration document violates the schema (unknown key, bad type, range).
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace fedhp
