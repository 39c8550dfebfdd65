#pragma once

#include <stdexcept>
#include <string>

namespace linearsr {

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error("ShapeError: " + msg) {}
};

struct DomainError : std::runtime_error {
    explicit DomainError(const std::string& msg) : std::runtime_error("DomainError: " + msg) {}
};

struct NonFiniteError : std::runtime_error {
    explicit NonFiniteError(const std::string& msg) : std::runtime_error("NonFiniteError: " + msg) {}
};

struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error("FormatError: " + msg) {}
};

struct TruncationError : std::runtime_error {
    explicit TruncationError(const std::string& msg) : std::runtime_error("TruncationError: " + msg) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error("ConfigError: " + msg) {}
};

struct TooShortError : std::runtime_error {
    explicit TooShortError(const std::string& msg) : std::runtime_error("TooShortError: " + msg) {}
};

struct AllFlatError : std::runtime_error {
    explicit AllFlatError(const std::string& msg) : std::runtime_error("AllFlatError: " + msg) {}
};

struct NoCheckpointError : std::runtime_error {
    explicit NoCheckpointError(const std::string& msg) : std::runtime_error("NoCheckpointError: " + msg) {}
};

struct InsufficientDataError : std::runtime_error {
    explicit InsufficientDataError(const std::string& msg) : std::runtime_error("InsufficientDataError: " + msg) {}
};

} // namespace linearsr
