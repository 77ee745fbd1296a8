#pragma once

#include <stdexcept>
#include <string>

namespace anmi {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A probability vector, coefficient, or other model parameter is outside its domain.
class ParameterDomainError : public Error {
public:
    using Error::Error;
};

/// The sampling design is inconsistent (n_s > N_s, too few units for a variance, ...).
class DesignError : public Error {
public:
    using Error::Error;
};

/// An operation that needs fully observed x met a missing value.
class CompletenessError : public Error {
public:
    using Error::Error;
};

/// Covariates supplied to a probit evaluation do not match the coefficient record.
class ArityError : public Error {
public:
    using Error::Error;
};

class SingularDesignError : public Error {
public:
    using Error::Error;
};

/// Probit maximum likelihood diverged (coefficient norm exploded).
class SeparationError : public Error {
public:
    using Error::Error;
};

/// Returned when the auxiliary margin cannot be matched by any valid probability.
class InfeasibleMarginError : public Error {
public:
    using Error::Error;
};

/// A chain (or the analysis of its output) failed inside the harness; the
/// message names the scenario, run, method and chain seed.
class ChainError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Malformed input file; carries a human-readable list of offending rows.
class SchemaError : public Error {
public:
    using Error::Error;
};

}  // namespace anmi
