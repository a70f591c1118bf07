#pragma once

#include <stdexcept>
#include <string>

namespace hashlat {

struct DimensionError : std::invalid_argument {
    explicit DimensionError(const std::string& msg) : std::invalid_argument(msg) {}
};

struct InvalidValueError : std::domain_error {
    explicit InvalidValueError(const std::string& msg) : std::domain_error(msg) {}
};

struct InvalidArgumentError : std::invalid_argument {
    explicit InvalidArgumentError(const std::string& msg) : std::invalid_argument(msg) {}
};

struct EmptyIndexError : std::runtime_error {
    explicit EmptyIndexError(const std::string& msg) : std::runtime_error(msg) {}
};

struct StateError : std::logic_error {
    explicit StateError(const std::string& msg) : std::logic_error(msg) {}
};

struct RangeError : std::out_of_range {
    explicit RangeError(const std::string& msg) : std::out_of_range(msg) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct TransportError : std::runtime_error {
    explicit TransportError(const std::string& msg) : std::runtime_error(msg) {}
};

// Raised when an attack or training loop produces a non-finite loss.
struct DivergenceError : std::runtime_error {
    int step;
    DivergenceError(const std::string& msg, int step_index)
        : std::runtime_error(msg), step(step_index) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace hashlat
