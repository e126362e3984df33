#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace fanav {

/// Base of every error raised by the library. `exit_code()` is what the CLI
/// returns when the error escapes a subcommand.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const { return 1; }
};

class ConfigError : public Error {
 public:
  using Error::Error;
  int exit_code() const override { return 3; }
};

class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset);
  std::uint64_t offset() const { return offset_; }
  int exit_code() const override { return 4; }

 private:
  std::uint64_t offset_;
};

class ShapeError : public Error {
 public:
  using Error::Error;
  int exit_code() const override { return 4; }
};

class NumericError : public Error {
 public:
  using Error::Error;
  int exit_code() const override { return 5; }
};

class IoError : public Error {
 public:
  using Error::Error;
  int exit_code() const override { return 6; }
};

class ProtocolError : public Error {
 public:
  using Error::Error;
  int exit_code() const override { return 7; }
};

class InvalidPoseError : public Error {
 public:
  using Error::Error;
  int exit_code() const override { return 3; }
};

class NoPathError : public Error {
 public:
  using Error::Error;
  int exit_code() const override { return 3; }
};

// Raised when a failure-labelled transition reaches a policy loss.
class ContractViolation : public Error {
 public:
  using Error::Error;
  int exit_code() const override { return 8; }
};

}  // namespace fanav
