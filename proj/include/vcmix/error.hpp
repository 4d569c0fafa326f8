#pragma once

#include <stdexcept>
#include <string>

namespace vcmix {

// Base of every error the library raises. Each subclass maps to one CLI
// exit code (see exit_code()).
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class InvalidParameter : public Error {
public:
  using Error::Error;
};

class DimensionError : public Error {
public:
  using Error::Error;
};

class InvalidInput : public Error {
public:
  using Error::Error;
};

class ParseError : public Error {
public:
  ParseError(const std::string &where, std::size_t line, const std::string &what)
      : Error(where + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

private:
  std::size_t line_;
};

class IdentifiabilityError : public Error {
public:
  using Error::Error;
};

class OptimizerError : public Error {
public:
  using Error::Error;
};

class IoError : public Error {
public:
  using Error::Error;
};

namespace exit_codes {
inline constexpr int ok = 0;
inline constexpr int validation = 2;
inline constexpr int identifiability = 3;
inline constexpr int optimizer = 4;
inline constexpr int io = 5;
} // namespace exit_codes

inline int exit_code(const Error &e) noexcept {
  if (dynamic_cast<const IdentifiabilityError *>(&e))
    return exit_codes::identifiability;
  if (dynamic_cast<const OptimizerError *>(&e))
    return exit_codes::optimizer;
  if (dynamic_cast<const IoError *>(&e))
    return exit_codes::io;
  return exit_codes::validation;
}

} // namespace vcmix
