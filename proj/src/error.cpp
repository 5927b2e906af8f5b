#include "telme/error.hpp"

namespace telme {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidParameter: return "invalid parameter";
    case ErrorKind::InvalidInput: return "invalid input";
    case ErrorKind::Configuration: return "configuration error";
    case ErrorKind::Parse: return "parse error";
    case ErrorKind::Schema: return "schema error";
    case ErrorKind::Dependency: return "dependency error";
    case ErrorKind::DegenerateRepresentation: return "degenerate representation";
    case ErrorKind::CheckFailure: return "check failure";
  }
  return "error";
}

}  // namespace telme
