#pragma once

#include <stdexcept>
#include <string>

namespace bridgeflow {

// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid caller-supplied data (bad shapes are ShapeError).
struct InputError : Error {
    using Error::Error;
};

// Dimension mismatch between operands.
struct ShapeError : InputError {
    using InputError::InputError;
};

// Malformed file content; message carries the offending location.
struct ParseError : InputError {
    using InputError::InputError;
};

// Fused graph does not connect the requested nodes.
struct ConnectivityError : InputError {
    using InputError::InputError;
};

// Non-finite values, failed factorizations, ODE blow-ups.
struct NumericalError : Error {
    using Error::Error;
};

// Failure inside a training loop; message carries iteration/parameter context.
struct TrainingError : NumericalError {
    using NumericalError::NumericalError;
};

}  // namespace bridgeflow
