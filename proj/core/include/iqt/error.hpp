#pragma once

#include <stdexcept>
#include <string>

namespace iqt {

/// Base of every error raised by the library. The CLI maps subclasses onto
/// exit codes: numeric failures exit 3, everything else exits 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FormatError : public Error {
 public:
  FormatError(const std::string& key, const std::string& what)
      : Error("format error [" + key + "]: " + what), key_(key) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

class TruncationError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class PreconditionError : public Error {
 public:
  using Error::Error;
};

class SamplingError : public Error {
 public:
  using Error::Error;
};

class CoverageError : public Error {
 public:
  using Error::Error;
};

class EvaluationError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values reached an optimizer or loss.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace iqt
