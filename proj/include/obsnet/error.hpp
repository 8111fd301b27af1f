#pragma once

#include <stdexcept>
#include <string>

namespace obsnet {

// Exit codes shared by every command-line entry point.
enum class ExitCode : int { ok = 0, bad_config = 2, missing_artifact = 3, numeric_failure = 4 };

class Error : public std::runtime_error {
 public:
  Error(ExitCode code, std::string kind, const std::string& what)
      : std::runtime_error(what), code_(code), kind_(std::move(kind)) {}

  ExitCode code() const noexcept { return code_; }
  const std::string& kind() const noexcept { return kind_; }

 private:
  ExitCode code_;
  std::string kind_;
};

struct ShapeError : Error {
  explicit ShapeError(const std::string& what) : Error(ExitCode::bad_config, "shape", what) {}
};

struct NumericError : Error {
  explicit NumericError(const std::string& what) : Error(ExitCode::numeric_failure, "numeric", what) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error(ExitCode::bad_config, "config", what) {}
};

struct ParseError : Error {
  explicit ParseError(const std::string& what) : Error(ExitCode::bad_config, "parse", what) {}
};

struct MissingArtifact : Error {
  explicit MissingArtifact(const std::string& what)
      : Error(ExitCode::missing_artifact, "missing_artifact", what) {}
};

struct StateError : Error {
  explicit StateError(const std::string& what) : Error(ExitCode::bad_config, "state", what) {}
};

}  // namespace obsnet
