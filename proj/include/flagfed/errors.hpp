#pragma once

#include <stdexcept>
#include <string>

namespace flagfed {

// Invalid user-supplied configuration (bad bounds, impossible requests).
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Mismatched vector/matrix dimensions between operands.
class DimensionError : public std::runtime_error {
public:
    explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

// File contents violate the documented format.
class ParseError : public std::runtime_error {
public:
    explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

// Structurally valid data that contradicts itself (counts, headers, weights).
class IntegrityError : public std::runtime_error {
public:
    explicit IntegrityError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numeric values outside an operation's domain.
class DomainError : public std::runtime_error {
public:
    explicit DomainError(const std::string& msg) : std::runtime_error(msg) {}
};

// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
public:
    explicit DivergenceError(const std::string& msg) : std::runtime_error(msg) {}
};

// A distribution or weight vector with no mass.
class DegenerateError : public std::runtime_error {
public:
    explicit DegenerateError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace flagfed
