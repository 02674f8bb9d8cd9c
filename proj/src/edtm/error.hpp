#pragma once

#include <stdexcept>
#include <string>

namespace edtm {

// Categories mirror the status codes exposed through the C API.
enum class ErrorKind {
  Input,
  Solver,
  Provider,
  Config,
  Hardening,
  Evaluation,
  Io,
  Conflict,
  NotFound,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

// Re-throws `e` with `context` prepended, keeping the kind.
[[noreturn]] inline void rethrow_with_context(const Error& e,
                                             const std::string& context) {
  throw Error(e.kind(), context + ": " + e.what());
}

}  // namespace edtm
