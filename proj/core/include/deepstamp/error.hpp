#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace deepstamp {

enum class ErrorKind {
  format,       // malformed bytes in a file or buffer
  range,        // a decoded value outside its legal domain
  dimension,    // shape or count mismatch
  spec,         // invalid StampSpec / plan parameters
  config,       // config or usage error
  numerical,    // NaN/Inf in a loss or parameter
  io,           // filesystem failure
  unsupported,  // recognized but not available (e.g. architecture not buildable)
};

const char* to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class FormatError : public Error {
 public:
  FormatError(const std::string& message, std::uint64_t offset)
      : Error(ErrorKind::format, message + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  explicit FormatError(const std::string& message) : Error(ErrorKind::format, message) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_ = 0;
};

class RangeError : public Error {
 public:
  explicit RangeError(const std::string& message) : Error(ErrorKind::range, message) {}
};

class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& message) : Error(ErrorKind::dimension, message) {}
};

class SpecError : public Error {
 public:
  explicit SpecError(const std::string& message) : Error(ErrorKind::spec, message) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& message) : Error(ErrorKind::config, message) {}
};

class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& message) : Error(ErrorKind::numerical, message) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& message) : Error(ErrorKind::io, message) {}
};

class UnsupportedError : public Error {
 public:
  explicit UnsupportedError(const std::string& message) : Error(ErrorKind::unsupported, message) {}
};

}  // namespace deepstamp
