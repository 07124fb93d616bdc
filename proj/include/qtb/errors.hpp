#pragma once

#include <stdexcept>
#include <string>

namespace qtb {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Precondition on an input value violated (bad tolerance, negative mass, ...).
class DomainError : public Error {
public:
    using Error::Error;
};

/// Zero pair separation or similar configuration where angles are undefined.
class DegenerateConfigurationError : public DomainError {
public:
    using DomainError::DomainError;
};

/// g(x) <= g_min: the point lies outside the classically allowed region.
class ForbiddenRegionError : public DomainError {
public:
    using DomainError::DomainError;
};

/// A metric block that should be positive definite is not.
class DegenerateMetricError : public DomainError {
public:
    using DomainError::DomainError;
};

class NumericalError : public Error {
public:
    using Error::Error;
};

/// A stochastic path produced a non-finite state.
class BlowUpError : public NumericalError {
public:
    BlowUpError(const std::string& what, double s) : NumericalError(what), s_(s) {}
    double s() const noexcept { return s_; }

private:
    double s_;
};

/// Stability limit would push the step below the configured floor.
class ResolutionError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

/// Least-squares fit cannot be formed (too few positive samples).
class FitError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

/// Channel window too short to decide an outcome.
class InconclusiveError : public Error {
public:
    using Error::Error;
};

/// Invalid run configuration; carries the offending key.
class ConfigError : public Error {
public:
    ConfigError(std::string key, const std::string& what)
        : Error(key + ": " + what), key_(std::move(key)) {}
    const std::string& key() const noexcept { return key_; }

private:
    std::string key_;
};

/// An upstream artifact a pipeline stage consumes is missing.
class DependencyError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace qtb
