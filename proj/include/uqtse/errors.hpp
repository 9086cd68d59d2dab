#pragma once

#include <stdexcept>
#include <string>

namespace uqtse {

// Base for every error this library raises on purpose. The CLI maps the
// subclasses onto process exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Invalid or inconsistent configuration / schema (exit code 2).
class ConfigError : public Error {
public:
    using Error::Error;
};

// Solver or training blew up: NaN, CFL violation, singular system (exit code 3).
class NumericalError : public Error {
public:
    using Error::Error;
};

// An upstream artifact or input file is absent or unreadable (exit code 4).
class InputError : public Error {
public:
    using Error::Error;
};

}  // namespace uqtse
