#pragma once

#include <stdexcept>
#include <string>

namespace primo {

/// Root of every exception the library throws.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Incompatible tensor or vector shapes.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Input outside a function's mathematical domain (e.g. log of a non-positive value).
class DomainError : public Error {
public:
    using Error::Error;
};

/// A documented precondition was violated by the caller.
class ContractError : public Error {
public:
    using Error::Error;
};

/// Batch normalisation in training mode needs at least two rows.
class BatchTooSmallError : public ContractError {
public:
    using ContractError::ContractError;
};

/// NaN or infinity reached a gradient or a loss.
class NonFiniteError : public Error {
public:
    using Error::Error;
};

/// Malformed dataset, checkpoint, or configuration content.
class SchemaError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

} // namespace primo
