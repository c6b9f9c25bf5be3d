#pragma once

#include <stdexcept>
#include <string>

namespace snst {

// Error taxonomy shared by the library, the CLI (exit codes) and the
// HTTP service (status codes).
enum class ErrorKind {
  parameter,    // out-of-range control values
  shape,        // tensor / image / mask extent mismatch
  input,        // unusable input image
  configuration,
  data,         // empty or undecodable training corpus
  integrity,    // corrupt checkpoint
  io,
  transport,    // remote service unreachable
  not_found,
  sequencing,   // operation called in the wrong order / stale cache
  resource,
  training,     // non-finite loss
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

const char* to_string(ErrorKind kind) noexcept;

// CLI contract: 0 success, 1 I/O, 2 validation, 3 configuration.
int exit_code_for(ErrorKind kind) noexcept;

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace snst
