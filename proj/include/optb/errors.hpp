#pragma once

#include <stdexcept>
#include <string>

namespace optb {

// Base class for everything this library throws on purpose.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Tensor extents that do not compose (matmul inner dims, layer inputs, ...).
class ShapeError : public Error {
public:
  using Error::Error;
};

// More images than a codec mode can pack losslessly.
class CapacityError : public Error {
public:
  using Error::Error;
};

// Malformed files or corrupted encoded data.
class FormatError : public Error {
public:
  using Error::Error;
};

// Ledger misuse: freeing bytes that were never tracked.
class AccountingError : public Error {
public:
  using Error::Error;
};

// Non-finite values where training must not continue silently.
class NumericError : public Error {
public:
  using Error::Error;
};

}  // namespace optb
