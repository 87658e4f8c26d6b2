#pragma once

#include <stdexcept>
#include <string>

namespace p2m {

/// Base error. `kind()` is a short machine-parsable category used by the CLI
/// when it prints `error: <kind>: <message>`.
class Error : public std::runtime_error {
public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

private:
  std::string kind_;
};

struct ShapeError : Error {
  explicit ShapeError(const std::string& what) : Error("shape", what) {}
};

struct AutogradError : Error {
  explicit AutogradError(const std::string& what) : Error("autograd", what) {}
};

struct GraphError : Error {
  explicit GraphError(const std::string& what) : Error("graph", what) {}
};

struct ValueError : Error {
  explicit ValueError(const std::string& what) : Error("value", what) {}
};

struct IoError : Error {
  explicit IoError(const std::string& what) : Error("io", what) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error("config", what) {}
};

} // namespace p2m
