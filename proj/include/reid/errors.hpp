#pragma once

#include <stdexcept>
#include <string>

namespace reid {

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Operand shapes do not conform for an operation.
struct ShapeError : Error {
  using Error::Error;
};

// Math domain violation (log / reciprocal of a non-positive input).
struct DomainError : Error {
  using Error::Error;
};

// Invalid configuration value, or arithmetic that yields impossible extents.
struct ConfigError : Error {
  using Error::Error;
};

// A documented API precondition was violated by the caller.
struct ContractError : Error {
  using Error::Error;
};

// File or serialization failure.
struct IoError : Error {
  using Error::Error;
};

// Training must stop: a loss component went non-finite. Carries the component
// name and the step index for the diagnostic dump.
struct TrainingAbort : Error {
  std::string component;
  long step;
  TrainingAbort(const std::string& component_name, long step_index, const std::string& msg)
      : Error(msg), component(component_name), step(step_index) {}
};

}  // namespace reid
