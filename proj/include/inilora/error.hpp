#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace inilora {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Caller supplied an invalid argument, shape or configuration.
class ValidationError : public Error {
public:
    using Error::Error;
};

class ShapeError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/// A computation produced NaN or Inf.
class NonFiniteError : public Error {
public:
    using Error::Error;
};

/// An iterative run blew up; carries the step at which it was detected.
class DivergenceError : public NonFiniteError {
public:
    DivergenceError(const std::string& what, std::int64_t step)
        : NonFiniteError(what), step_(step) {}

    std::int64_t step() const noexcept { return step_; }

private:
    std::int64_t step_;
};

/// File missing, unreadable, malformed or corrupt.
class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace inilora
