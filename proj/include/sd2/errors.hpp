#pragma once

#include <stdexcept>
#include <string>

namespace sd2 {

// Process exit codes. Stable across versions.
enum class ExitCode : int {
  kOk = 0,
  kConfig = 2,
  kIo = 3,
  kNumerical = 4,
  kVerification = 5,
};

class Error : public std::runtime_error {
 public:
  Error(ExitCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ExitCode code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

// Bad configuration, schema violation, shape or mode mismatch.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ExitCode::kConfig, what) {}
};

class DimensionError : public ConfigError {
 public:
  explicit DimensionError(const std::string& what) : ConfigError(what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ExitCode::kIo, what) {}
};

class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what) : Error(ExitCode::kNumerical, what) {}
};

// A minibatch that holds only one treatment class.
class DegenerateBatchError : public NumericalError {
 public:
  explicit DegenerateBatchError(const std::string& what) : NumericalError(what) {}
};

class VerificationError : public Error {
 public:
  explicit VerificationError(const std::string& what) : Error(ExitCode::kVerification, what) {}
};

}  // namespace sd2
