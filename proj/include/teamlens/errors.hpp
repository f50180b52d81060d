#pragma once

#include <stdexcept>
#include <string>

namespace teamlens {

// Malformed or inconsistent input data (bad schema, invariant violations).
class DataError : public std::runtime_error {
  public:
    explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// Numerical failure (non-convergence, singular matrix, separation).
class NumericError : public std::runtime_error {
  public:
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace teamlens
