#pragma once

#include <stdexcept>
#include <string>

namespace fkb {

// Bad argument or configuration supplied by the caller.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DimensionMismatch : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

// Potential outcomes are not known (external data, or no treated units).
class UnavailableTruth : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input file.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Numerical routine failed to produce a usable answer.
class SolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace fkb
