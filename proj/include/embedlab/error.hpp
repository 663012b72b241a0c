#pragma once

#include <stdexcept>
#include <string>

namespace embedlab {

// Base class for all toolkit errors. Subtypes let the CLI map failures
// to exit codes without string matching.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor/layer shape disagreement.
class DimensionError : public Error {
public:
    using Error::Error;
};

// Invalid configuration value or loss/config mismatch.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Malformed input file (bad magic, truncation, size mismatch).
class FormatError : public Error {
public:
    using Error::Error;
};

// Numerically degenerate input, e.g. normalizing a near-zero vector.
class DegenerateInputError : public Error {
public:
    using Error::Error;
};

// Operation sequencing violation, e.g. backward before forward.
class StateError : public Error {
public:
    using Error::Error;
};

// Out-of-range value in otherwise well-formed input.
class ValueError : public Error {
public:
    using Error::Error;
};

// Filesystem failure.
class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace embedlab
