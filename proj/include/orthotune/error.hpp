// Copyright 2026 The orthotune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace orthotune {

// Base of every error the library throws. The CLI maps subclasses onto exit
// codes (see cli.hpp).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not fit the operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A documented precondition was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Index or name outside the valid set (class ids, labels, tensor names).
class LookupError : public Error {
 public:
  using Error::Error;
};

// LU factorization met a pivot below tolerance.
class SingularMatrixError : public Error {
 public:
  SingularMatrixError(std::size_t pivot, double magnitude)
      : Error("singular matrix: pivot " + std::to_string(pivot) +
              " has magnitude " + std::to_string(magnitude)),
        pivot_(pivot) {}

  std::size_t pivot() const noexcept { return pivot_; }

 private:
  std::size_t pivot_;
};

// Input lies outside the domain of a map (e.g. an orthogonal matrix with a
// -1 eigenvalue handed to the inverse Cayley transform).
class DomainError : public Error {
 public:
  using Error::Error;
};

// A neuron (weight column) with zero norm.
class DegenerateNeuronError : public Error {
 public:
  using Error::Error;
};

// Two normalized neurons coincide, so hyperspherical energy diverges.
class InfiniteEnergyError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Files that do not belong together (adapter vs base checkpoint, versions).
class CompatibilityError : public Error {
 public:
  using Error::Error;
};

}  // namespace orthotune
