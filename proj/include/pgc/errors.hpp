#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pgc {

/// Bad input: shape/channel mismatch, non-finite data, invalid configuration.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Normal matrix of a ridge fit is singular (only possible at lambda = 0).
class RankDeficientError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/// Malformed text input. `line()` is 1-based, 0 when not applicable.
class ParseError : public ValidationError {
public:
    ParseError(const std::string& what, std::size_t line)
        : ValidationError(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// An optimization run left the finite domain.
class RuntimeAbort : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace pgc
