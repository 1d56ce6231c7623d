#pragma once

#include <stdexcept>
#include <string>

namespace stgait {

/// Shape or extent mismatch between operands.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Input data or configuration violates a documented contract.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Malformed text input; carries the 1-based line number when known.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, long line = 0)
        : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
          line_(line) {}
    long line() const { return line_; }

private:
    long line_;
};

/// Non-finite values encountered during training or optimization.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// API misuse (e.g. backward from a non-scalar).
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

}  // namespace stgait
