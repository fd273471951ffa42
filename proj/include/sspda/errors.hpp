#pragma once

#include <stdexcept>
#include <string>

namespace sspda {

// Error taxonomy shared by all modules. Everything derives from Error so the
// CLI boundary can map the whole family onto exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Shape or size mismatch between tensors / grids.
class DimensionError : public Error {
public:
    using Error::Error;
};

// Invalid argument value (out-of-range hyperparameter, bad permutation index, ...).
class ParameterError : public Error {
public:
    using Error::Error;
};

// Label or element index outside the valid range.
class IndexError : public Error {
public:
    using Error::Error;
};

// A documented precondition was violated (e.g. unnormalized probability rows).
class ContractError : public Error {
public:
    using Error::Error;
};

// File system / serialization failure.
class IoError : public Error {
public:
    using Error::Error;
};

// Bad configuration file or flag combination. Maps to CLI exit code 1.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Training produced a non-finite loss.
class DivergenceError : public Error {
public:
    using Error::Error;
};

}  // namespace sspda
