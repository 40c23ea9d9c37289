#pragma once

#include <stdexcept>
#include <string>

namespace attriprompt {

// Error taxonomy used across the library. Everything derives from
// std::runtime_error so callers that do not care can catch one type.

// Operand shapes or dimensions do not line up.
struct shape_error : std::runtime_error {
    explicit shape_error(const std::string& msg) : std::runtime_error(msg) {}
};

// An API precondition was violated (bad label, stale tape, wrong call order).
struct contract_error : std::runtime_error {
    explicit contract_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerically degenerate input (zero-norm row where a direction is required).
struct degenerate_input_error : std::runtime_error {
    explicit degenerate_input_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid configuration value or combination.
struct config_error : std::runtime_error {
    explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed or truncated file.
struct format_error : std::runtime_error {
    explicit format_error(const std::string& msg) : std::runtime_error(msg) {}
};

// A function expected to be deterministic returned differing values.
struct determinism_error : std::runtime_error {
    explicit determinism_error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace attriprompt
