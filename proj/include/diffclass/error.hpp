#pragma once

#include <stdexcept>
#include <string>

namespace diffclass {

// invalid-argument errors use std::invalid_argument directly.

class InvalidState : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Non-finite value detected. `where` is a layer index (networks) or a
// timestep (sampling chain); -1 when not applicable.
class NumericFailure : public std::runtime_error {
public:
    NumericFailure(const std::string& what, int where = -1)
        : std::runtime_error(what), where_(where)
    {
    }
    int where() const { return where_; }

private:
    int where_;
};

// Anything wrong with input data: I/O, CSV schema, manifest integrity.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public DataError {
public:
    using DataError::DataError;
};

class SchemaError : public DataError {
public:
    using DataError::DataError;
};

class IntegrityError : public DataError {
public:
    using DataError::DataError;
};

}  // namespace diffclass
