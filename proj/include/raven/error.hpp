#pragma once

#include <stdexcept>
#include <string>

namespace raven {

// Error categories double as the machine-parsable tag the CLI prints on
// failure, so keep the names stable.
enum class ErrorKind {
  Config,     // bad or inconsistent configuration values
  Dimension,  // tensor shape mismatch
  Length,     // sequence exceeds a configured maximum
  Numeric,    // NaN/Inf or a violated numeric precondition
  Contract,   // an operation's precondition was violated
  Format,     // malformed file on disk
  Io,         // filesystem failure
};

inline const char* error_kind_name(ErrorKind k) {
  switch (k) {
    case ErrorKind::Config: return "config";
    case ErrorKind::Dimension: return "dimension";
    case ErrorKind::Length: return "length";
    case ErrorKind::Numeric: return "numeric";
    case ErrorKind::Contract: return "contract";
    case ErrorKind::Format: return "format";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void raise(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool ok, ErrorKind kind, const std::string& message) {
  if (!ok) raise(kind, message);
}

}  // namespace raven
