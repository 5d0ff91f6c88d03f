#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace facetouch {

// Base class for all errors raised by the library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A caller broke an operation's contract (shape mismatch, bad argument).
struct ContractViolation : Error {
    using Error::Error;
};

// Malformed external input. `where` is a byte offset for binary formats
// and a 1-based line number for text formats.
struct ParseError : Error {
    ParseError(const std::string& msg, std::size_t where)
        : Error(msg + " (at " + std::to_string(where) + ")"), position(where) {}
    std::size_t position = 0;
};

// Invalid configuration value; `field` is the dotted path of the offender.
struct ConfigError : Error {
    ConfigError(const std::string& field_path, const std::string& msg)
        : Error(field_path + ": " + msg), field(field_path) {}
    std::string field;
};

struct IoError : Error {
    using Error::Error;
};

}  // namespace facetouch
