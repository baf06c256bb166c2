#pragma once

#include <stdexcept>
#include <string>

namespace roughpde {

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Array shapes or dimensions do not match the contract of an operation.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Two objects that must share a grid or a driver do not.
class IncompatibilityError : public Error {
public:
    using Error::Error;
};

/// A parameter lies outside its admissible range.
class RangeError : public Error {
public:
    using Error::Error;
};

/// A non-finite value was produced or supplied.
class NumericError : public Error {
public:
    using Error::Error;
};

/// A precondition that the mathematics relies on does not hold.
class ContractViolation : public Error {
public:
    using Error::Error;
};

/// A derivative callback required by an operation was not supplied.
class CapabilityError : public Error {
public:
    using Error::Error;
};

/// A trajectory left the configured safety box.
class DivergenceError : public Error {
public:
    DivergenceError(const std::string& what, double exit_time)
        : Error(what), exit_time_(exit_time) {}
    double exit_time() const noexcept { return exit_time_; }

private:
    double exit_time_;
};

/// A determinant that must stay positive crossed zero.
class PositivityViolation : public Error {
public:
    using Error::Error;
};

/// A fixed-point iteration did not contract within its budget.
class NonConvergence : public Error {
public:
    using Error::Error;
};

/// Malformed or inconsistent experiment configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

}  // namespace roughpde
