#include "snst/errors.hpp"

namespace snst {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::parameter: return "parameter";
    case ErrorKind::shape: return "shape";
    case ErrorKind::input: return "input";
    case ErrorKind::configuration: return "configuration";
    case ErrorKind::data: return "data";
    case ErrorKind::integrity: return "integrity";
    case ErrorKind::io: return "io";
    case ErrorKind::transport: return "transport";
    case ErrorKind::not_found: return "not_found";
    case ErrorKind::sequencing: return "sequencing";
    case ErrorKind::resource: return "resource";
    case ErrorKind::training: return "training";
  }
  return "unknown";
}

int exit_code_for(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::parameter:
    case ErrorKind::shape:
    case ErrorKind::input:
    case ErrorKind::sequencing:
      return 2;
    case ErrorKind::configuration:
      return 3;
    default:
      return 1;
  }
}

}  // namespace snst
