#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace scrc {

// Error taxonomy shared by every module. Each kind maps to a distinct
// failure class so callers (and the CLI) can report it precisely.

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class InputError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ContractError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"),
        message_(what),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }
  const std::string& message() const noexcept { return message_; }

 private:
  std::string message_;
  std::size_t offset_;
};

class UnsupportedVersionError : public FormatError {
 public:
  UnsupportedVersionError(unsigned version, std::size_t offset)
      : FormatError("unsupported format version " + std::to_string(version),
                    offset) {}
};

/// Parse error inside a line-oriented file; carries the 1-based line number.
class LineError : public InputError {
 public:
  LineError(const std::string& path, std::size_t line, const std::string& what)
      : InputError(path + ":" + std::to_string(line) + ": " + what),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace scrc
