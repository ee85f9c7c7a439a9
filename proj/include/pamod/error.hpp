#pragma once

#include <stdexcept>
#include <string>

namespace pamod {

// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input data violates a documented invariant (bad scenario, dimension mismatch,
// disconnected grid, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Text input could not be parsed. `line` is 1-based, 0 when unknown.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, int line)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

// Scenario JSON did not match the schema; `pointer` is an RFC 6901 JSON pointer.
class SchemaError : public Error {
 public:
  SchemaError(const std::string& pointer, const std::string& what)
      : Error(pointer + ": " + what), pointer_(pointer) {}
  const std::string& pointer() const { return pointer_; }

 private:
  std::string pointer_;
};

// Transport failure in the networked negotiation.
class TransportError : public Error {
 public:
  using Error::Error;
};

}  // namespace pamod
