#pragma once

#include <atomic>
#include <stdexcept>
#include <string>

namespace mstage {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& msg, long row = -1)
      : Error(row >= 0 ? "row " + std::to_string(row) + ": " + msg : msg), row_(row) {}
  long row() const { return row_; }

 private:
  long row_;
};

class SchemaError : public Error {
  using Error::Error;
};
class ValidationError : public Error {
  using Error::Error;
};
/// A CCMV quantity cannot be estimated because a complete-case cell is empty.
class IdentificationError : public Error {
  using Error::Error;
};
class ConfigurationError : public Error {
  using Error::Error;
};
class PreconditionError : public Error {
  using Error::Error;
};
class DomainError : public Error {
  using Error::Error;
};
class DegenerateError : public Error {
  using Error::Error;
};
class MissingModelError : public Error {
  using Error::Error;
};
class CholeskyError : public Error {
  using Error::Error;
};

/// Process-wide warning channel. Warnings are counted and, when verbose,
/// echoed to stderr. Safe to call from worker threads.
void warn(const std::string& message);
long warning_count();
void set_verbose_warnings(bool on);

}  // namespace mstage
