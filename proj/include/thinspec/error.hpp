#pragma once

#include <stdexcept>
#include <string>

namespace thinspec {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual const char* kind() const noexcept { return "error"; }
};

// Bad argument values (sizes, orders, tolerances).
class ParameterError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "parameter"; }
};

// Invalid domain shape: nonpositive height, rank-deficient basis.
class GeometryError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "geometry"; }
};

// Mathematical domain violations, e.g. reciprocal of a series with zero constant term.
class DomainError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "domain"; }
};

// Numerical breakdown: degeneracy, branch crossing, stagnation, non-contraction.
class DiagnosticError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "diagnostic"; }
};

class ConfigError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "config"; }
};

} // namespace thinspec
