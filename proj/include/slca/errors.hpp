#pragma once

#include <stdexcept>
#include <string>

namespace slca {

enum class ErrorKind {
  InvalidArgument,
  DimensionMismatch,
  Parse,
  UnsupportedMissing,
  Numerical,
  DegenerateBlock,
  SingularInformation,
  Config,
  Io,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "invalid argument";
    case ErrorKind::DimensionMismatch: return "dimension mismatch";
    case ErrorKind::Parse: return "parse error";
    case ErrorKind::UnsupportedMissing: return "missing response";
    case ErrorKind::Numerical: return "numerical failure";
    case ErrorKind::DegenerateBlock: return "degenerate block";
    case ErrorKind::SingularInformation: return "singular information";
    case ErrorKind::Config: return "configuration error";
    case ErrorKind::Io: return "i/o error";
  }
  return "error";
}

/// Base exception for every failure raised by the library. `index()` carries
/// the offending row, block or parameter index when one exists, else -1.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what, long index = -1)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what),
        kind_(kind),
        index_(index) {}

  ErrorKind kind() const noexcept { return kind_; }
  long index() const noexcept { return index_; }

 private:
  ErrorKind kind_;
  long index_;
};

/// Parse failures keep the 1-based (row, column) of the offending cell.
class ParseError : public Error {
 public:
  ParseError(ErrorKind kind, const std::string& what, long row, long column)
      : Error(kind,
              what + " at row " + std::to_string(row) + ", column " +
                  std::to_string(column),
              row),
        row_(row),
        column_(column) {}

  long row() const noexcept { return row_; }
  long column() const noexcept { return column_; }

 private:
  long row_;
  long column_;
};

}  // namespace slca
