#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

namespace g2kit {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Unrecognised or unsupported file layout (bad magic, version, header).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Stream contents violate an ordering or membership invariant.
class IntegrityError : public Error {
 public:
  IntegrityError(const std::string& what, std::uint64_t position)
      : Error(what), position_(position) {}

  /// Event index (or byte offset, when raised by a file reader).
  std::uint64_t position() const noexcept { return position_; }

 private:
  std::uint64_t position_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Caller passed arguments that can never be valid (e.g. identical channels).
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Histogram geometry is inconsistent or two geometries differ.
class GeometryError : public Error {
 public:
  GeometryError(const std::string& what, std::string field = {})
      : Error(what), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class RangeError : public Error {
 public:
  using Error::Error;
};

/// Statistics are too poor for the requested quantity (zero denominators,
/// zero variances, inconsistent correlations).
class DegenerateError : public Error {
 public:
  using Error::Error;
};

class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, int iterations, double objective)
      : Error(what), iterations_(iterations), objective_(objective) {}

  int iterations() const noexcept { return iterations_; }
  double objective() const noexcept { return objective_; }

 private:
  int iterations_;
  double objective_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Error with the offending line number (CSV / key=value parsers).
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(what + " (line " + std::to_string(line) + ")"), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace g2kit
