// Copyright 2026 The DCD Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dcd {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes or geometry.
struct DimensionError : Error {
  using Error::Error;
};

/// Argument outside the mathematical domain of an op (log of non-positive, division by zero).
struct DomainError : Error {
  using Error::Error;
};

/// Input that cannot be normalized (zero rows) or similar degenerate cases.
struct DegenerateInputError : Error {
  using Error::Error;
};

struct IndexError : Error {
  using Error::Error;
};

/// Invalid hyperparameters or configuration keys.
struct ConfigError : Error {
  using Error::Error;
};

/// Malformed binary input. Carries the byte offset at which the fault was detected.
struct FormatError : Error {
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset(offset) {}
  std::size_t offset;
};

/// Non-finite loss during training.
struct DivergenceError : Error {
  DivergenceError(const std::string& what, std::size_t step)
      : Error(what + " (at step " + std::to_string(step) + ")"), step(step) {}
  std::size_t step;
};

}  // namespace dcd
