#pragma once

#include <stdexcept>
#include <string>

namespace mspllar {

/// Base class for every error the library raises.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid arguments or inconsistent dimensions supplied by the caller.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent input data (files, series, covariates).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Numerical failure: singular systems, infeasible parameters, divergence.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace mspllar
