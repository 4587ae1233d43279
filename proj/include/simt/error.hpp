#pragma once

#include <stdexcept>
#include <string>

namespace simt {

/// Invalid user-supplied configuration (bad k, gamma out of range, ...).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed input text (line-count mismatch, blank lines).
class IngestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Checkpoint file is truncated, has a bad magic, or disagrees with the
/// expected configuration.
class CorruptionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes or sequence lengths do not line up.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Numerical failure (non-finite loss, zero variance).
class NumericError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

}  // namespace simt
