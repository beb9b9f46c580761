#pragma once

#include <stdexcept>
#include <string>

namespace gencomp {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad user input: malformed files, invalid configs, contract violations.
/// The CLI maps these to exit code 2.
class ValidationError : public Error {
public:
    using Error::Error;
};

class ModelFormatError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/// The external evaluation worker broke the line protocol.
class ProtocolError : public Error {
public:
    using Error::Error;
};

/// Warm initialization could not reach the requested population size.
class InfeasibleError : public Error {
public:
    using Error::Error;
};

/// A rank that no code maps onto exactly.
class UnrepresentableError : public Error {
public:
    UnrepresentableError(const std::string& what, int nearest_code)
        : Error(what), nearest_code_(nearest_code) {}

    int nearest_code() const noexcept { return nearest_code_; }

private:
    int nearest_code_;
};

}  // namespace gencomp
