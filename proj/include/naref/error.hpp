#pragma once

#include <stdexcept>
#include <string>

namespace naref {

enum class ErrorKind {
  Io,
  UnsupportedBitDepth,
  UnsupportedColorType,
  ShapeMismatch,
  InvalidArgument,
  UnknownType,
  Parse,
  Format,
  NonFinite,
  NotFound,
};

const char* to_string(ErrorKind kind);

/// Single exception type thrown across the toolkit; `kind()` distinguishes
/// the failure class for callers that need to branch on it.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace naref
