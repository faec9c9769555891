#pragma once

#include <stdexcept>
#include <string>

namespace wattgan {

// Every library failure derives from Error; the CLI maps kinds to exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ArgumentError : public Error {
public:
    using Error::Error;
};

// Malformed input files (CSV, checkpoint, config).
class FormatError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

// Data-level failures: empty series, empty training split, mismatched labels.
class DataError : public Error {
public:
    using Error::Error;
};

class NumericalError : public Error {
public:
    using Error::Error;
};

// Checkpoint/config schema does not match what this build understands.
class VersionError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

}  // namespace wattgan
