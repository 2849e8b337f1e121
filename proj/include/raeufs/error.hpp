#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace raeufs {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A precondition on an argument value was violated.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Malformed input file. Row and column are 1-based; 0 means "not applicable".
class ParseError : public Error {
 public:
  ParseError(const std::string& path, std::size_t row, std::size_t col,
             const std::string& what)
      : Error(path + ":" + std::to_string(row) + ":" + std::to_string(col) +
              ": " + what),
        path_(path),
        row_(row),
        col_(col) {}

  const std::string& path() const { return path_; }
  std::size_t row() const { return row_; }
  std::size_t col() const { return col_; }

 private:
  std::string path_;
  std::size_t row_;
  std::size_t col_;
};

/// Invalid experiment configuration; `field()` names the offending key.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& what)
      : Error(field + ": " + what), field_(std::move(field)) {}

  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

}  // namespace raeufs
