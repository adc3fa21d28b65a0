#pragma once

#include <stdexcept>
#include <string>

namespace evasion {

/// Base for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition on an argument or input record was violated.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Malformed input file (TSV row, JSON document, config).
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Error taxonomy shared by every remote model backend.
enum class ProviderErrorKind { kTransport, kRefusal, kEmpty, kContract };

const char* to_string(ProviderErrorKind kind);
ProviderErrorKind provider_error_kind_from_string(const std::string& s);

class ProviderError : public Error {
 public:
  ProviderError(ProviderErrorKind kind, const std::string& message, int attempts = 1)
      : Error(std::string(to_string(kind)) + ": " + message), kind_(kind), attempts_(attempts) {}

  ProviderErrorKind kind() const { return kind_; }
  int attempts() const { return attempts_; }
  bool retryable() const { return kind_ == ProviderErrorKind::kTransport; }

 private:
  ProviderErrorKind kind_;
  int attempts_;
};

}  // namespace evasion
