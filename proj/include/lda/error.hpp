#pragma once

#include <stdexcept>
#include <string>

namespace lda {

// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Tensor shape / dimension mismatch.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration value (rates, profile parameters, grids, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed input file (CSV rows, manifests).
class ParseError : public Error {
 public:
  using Error::Error;
};

// Corrupt or mismatched checkpoint file.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

// Class label outside [0, C).
class LabelError : public Error {
 public:
  using Error::Error;
};

// Numeric domain violation (e.g. log of a negative value).
class NumericDomainError : public Error {
 public:
  using Error::Error;
};

// Training diverged (non-finite loss or gradient); carries the step index.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::size_t step)
      : Error(what), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

// Diagnostic quantity undefined for the given inputs.
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

// Filesystem failure surfaced to the caller.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace lda
