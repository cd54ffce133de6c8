#pragma once

#include <stdexcept>
#include <string>

namespace perlcf {

// Base of every error thrown by the library. The CLI maps subclasses onto
// exit codes: ConfigError -> 1, DataError -> 2, NumericError -> 3.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class DataError : public Error {
public:
    using Error::Error;
};

// Parse failures carry the 1-based line number of the offending input line.
class ParseError : public DataError {
public:
    ParseError(const std::string& what, std::size_t line)
        : DataError("line " + std::to_string(line) + ": " + what), line_(line) {}
    explicit ParseError(const std::string& what) : DataError(what), line_(0) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class NumericError : public Error {
public:
    using Error::Error;
};

class CalibrationError : public NumericError {
public:
    using NumericError::NumericError;
};

}  // namespace perlcf
