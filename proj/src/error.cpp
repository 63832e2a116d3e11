#include "piba/error.hpp"

namespace piba {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::shape: return "shape";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::invalid_argument: return "invalid_argument";
    case ErrorKind::undefined_correlation: return "undefined_correlation";
    case ErrorKind::bad_magic: return "bad_magic";
    case ErrorKind::bad_version: return "bad_version";
    case ErrorKind::truncated: return "truncated";
    case ErrorKind::format: return "format";
    case ErrorKind::validation: return "validation";
    case ErrorKind::config: return "config";
    case ErrorKind::missing_artifact: return "missing_artifact";
    case ErrorKind::io: return "io";
  }
  return "unknown";
}

}  // namespace piba
