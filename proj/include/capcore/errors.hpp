#pragma once

#include <stdexcept>
#include <string>

namespace capcore {

// Error taxonomy shared by the library and the CLI exit-code mapping:
// config/usage problems, data/file problems, numeric/shape problems.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

class DataError : public Error {
public:
    explicit DataError(const std::string& msg) : Error(msg) {}
};

// Shape mismatches, invalid axes, malformed tensor arguments.
class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// Non-finite values, failed numeric invariants.
class NumericError : public Error {
public:
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

} // namespace capcore
