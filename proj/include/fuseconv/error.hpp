#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fuseconv {

/// Invalid tensor shape or convolution/pooling geometry.
class GeometryError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Operands that do not conform (dimension or channel mismatch).
class ContractError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Blocking parameters or engine configuration that cannot be honoured.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Numerically invalid layer parameters (e.g. var + eps <= 0).
class ParameterError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Buffer allocation failed; carries the size that was requested.
class AllocationError : public std::runtime_error {
public:
    AllocationError(const std::string& what, std::size_t bytes)
        : std::runtime_error(what + " (" + std::to_string(bytes) + " bytes)"), bytes_(bytes) {}
    std::size_t bytes() const noexcept { return bytes_; }

private:
    std::size_t bytes_;
};

/// Model file diagnostics; line is 1-based, 0 when not tied to a line.
class ParseError : public std::runtime_error {
public:
    ParseError(std::size_t line, const std::string& msg)
        : std::runtime_error(line ? "line " + std::to_string(line) + ": " + msg : msg), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

}  // namespace fuseconv
