#include "naref/error.hpp"

namespace naref {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Io: return "io";
    case ErrorKind::UnsupportedBitDepth: return "unsupported bit depth";
    case ErrorKind::UnsupportedColorType: return "unsupported color type";
    case ErrorKind::ShapeMismatch: return "shape mismatch";
    case ErrorKind::InvalidArgument: return "invalid argument";
    case ErrorKind::UnknownType: return "unknown type";
    case ErrorKind::Parse: return "parse error";
    case ErrorKind::Format: return "format error";
    case ErrorKind::NonFinite: return "non-finite value";
    case ErrorKind::NotFound: return "not found";
  }
  return "unknown";
}

}  // namespace naref
