#pragma once

#include <stdexcept>
#include <string>

namespace armt {

/// Malformed data or arguments (bad panel rows, non-increasing times, ...).
class InvalidInput : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Parameter outside its mathematical domain (|phi| >= 1, v <= 0, ...).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Non-finite likelihoods, failed factorizations, degenerate weights.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace armt
