#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace cmslstm {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
  virtual const char* kind() const noexcept { return "error"; }
};

/// Operand shapes do not satisfy an op's contract. Nothing broadcasts.
class ShapeError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "shape"; }
};

/// Invalid configuration or flag combination, detected before any work starts.
class ConfigError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "config"; }
};

/// Non-finite values where finite ones are required (NaN gradients, NaN loss).
class NumericError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "numeric"; }
};

/// Malformed binary file. `offset` is the byte position where parsing failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }
  const char* kind() const noexcept override { return "format"; }

 private:
  std::uint64_t offset_;
};

/// Filesystem failures: missing inputs, unwritable outputs.
class IoError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "io"; }
};

}  // namespace cmslstm
