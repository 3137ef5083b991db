#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace flare {

// Base class for every error thrown by this library.
class FlareError : public std::runtime_error {
 public:
  explicit FlareError(const std::string& what) : std::runtime_error(what) {}
};

// Shape disagreement between tensors. Message names both shapes.
class DimensionError : public FlareError {
 public:
  using FlareError::FlareError;
};

// Out-of-range token id, position, or axis.
class IndexError : public FlareError {
 public:
  using FlareError::FlareError;
};

// A documented precondition was violated by the caller.
class ContractError : public FlareError {
 public:
  using FlareError::FlareError;
};

// Checkpoint file problems. Subclasses distinguish the failure modes so
// callers (and tests) can tell a corrupt header from a shape mismatch
// from a truncated payload.
class CheckpointError : public FlareError {
 public:
  using FlareError::FlareError;
};

class CheckpointHeaderError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class CheckpointShapeError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class CheckpointTruncatedError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

// Divergence or other unrecoverable failure during optimization.
// Message names the step at which it happened.
class TrainingError : public FlareError {
 public:
  using FlareError::FlareError;
};

// Invalid experiment configuration. Message lists offending keys.
class ConfigError : public FlareError {
 public:
  using FlareError::FlareError;
};

inline std::string shape_string(const std::vector<int>& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

}  // namespace flare
