#pragma once

#include <stdexcept>
#include <string>

namespace ecgcmr {

// Exit codes of the CLI map onto these categories.
enum class ExitCode : int {
  ok = 0,
  failure = 1,
  config = 2,
  missing_prerequisite = 3,
  numeric = 4,
};

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what, ExitCode code = ExitCode::failure)
      : std::runtime_error(what), code_(code) {}
  ExitCode code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

/// Invalid configuration, invalid arguments or out-of-range settings.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(what, ExitCode::config) {}
};

/// A stage was asked to run before the artifact it consumes exists.
class MissingPrerequisite : public Error {
 public:
  explicit MissingPrerequisite(const std::string& what)
      : Error(what, ExitCode::missing_prerequisite) {}
};

/// Non-finite losses, degenerate statistics and similar numeric failures.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(what, ExitCode::numeric) {}
};

/// Malformed dataset or checkpoint files (bad version, shape, hash).
class FormatError : public Error {
 public:
  explicit FormatError(const std::string& what) : Error(what, ExitCode::failure) {}
};

}  // namespace ecgcmr
