#include "edtm/error.hpp"

namespace edtm {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Input: return "input";
    case ErrorKind::Solver: return "solver";
    case ErrorKind::Provider: return "provider";
    case ErrorKind::Config: return "config";
    case ErrorKind::Hardening: return "hardening";
    case ErrorKind::Evaluation: return "evaluation";
    case ErrorKind::Io: return "io";
    case ErrorKind::Conflict: return "conflict";
    case ErrorKind::NotFound: return "not found";
  }
  return "unknown";
}

}  // namespace edtm
