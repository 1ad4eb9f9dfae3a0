#pragma once

#include <stdexcept>
#include <string>

namespace hacseg {

enum class ErrorKind {
  Config,           // invalid configuration or precondition
  Data,             // missing/undecodable input, dimension mismatch
  Io,               // filesystem write failures
  Numeric,          // non-finite activations or losses
  UndefinedMetric,  // metric denominator is zero
};

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

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config: return "config";
    case ErrorKind::Data: return "data";
    case ErrorKind::Io: return "io";
    case ErrorKind::Numeric: return "numeric";
    case ErrorKind::UndefinedMetric: return "undefined-metric";
  }
  return "unknown";
}

}  // namespace hacseg
