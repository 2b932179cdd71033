#pragma once

#include <stdexcept>
#include <string>

namespace safeshield {

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Dimension mismatch or otherwise malformed argument.
class InputError : public Error {
public:
    using Error::Error;
};

/// A documented precondition of an operation does not hold.
class PreconditionError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration value or combination.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Malformed safe-set or config file.
class ParseError : public Error {
public:
    using Error::Error;
};

/// The invariant-set iteration or a runtime check invalidated a safety certificate.
class CertificateError : public Error {
public:
    using Error::Error;
};

/// Fixed-point iteration hit its cap.
class ConvergenceError : public Error {
public:
    using Error::Error;
};

/// Caller broke an interface contract (e.g. empty mask on a non-terminal transition).
class ContractViolation : public Error {
public:
    using Error::Error;
};

/// A shielded run executed an action or reached a state that the shield should have excluded.
class SafetyViolation : public Error {
public:
    using Error::Error;
};

/// Rejection sampling ran out of attempts.
class BudgetExhausted : public Error {
public:
    using Error::Error;
};

}  // namespace safeshield
