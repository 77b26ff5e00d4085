#pragma once

#include <stdexcept>
#include <string>

namespace voxbox {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Incompatible extents, ranks or dtypes between operands.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Misuse of the differentiation tape (stale root, seed mismatch, ...).
class TapeError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class BadMagicError : public IoError {
public:
    using IoError::IoError;
};

class UnsupportedDtypeError : public IoError {
public:
    using IoError::IoError;
};

class TruncatedError : public IoError {
public:
    using IoError::IoError;
};

class ChecksumError : public IoError {
public:
    using IoError::IoError;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

/// Raised when a training step produces a non-finite loss or gradient.
class NonFiniteError : public Error {
public:
    using Error::Error;
};

} // namespace voxbox
