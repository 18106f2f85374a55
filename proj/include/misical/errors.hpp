#pragma once

#include <stdexcept>
#include <string>

namespace misical {

/// Input failed a precondition (non-normalized distribution, bad index, ...).
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A configuration value is missing, malformed or out of range.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A state invariant would be broken (double labelling, budget overrun).
class InvariantError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Training produced a non-finite value.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace misical
