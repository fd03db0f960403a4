#pragma once

#include <stdexcept>
#include <string>

namespace radar {

// Shape or dimension mismatch between operands.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error("shape error: " + msg) {}
};

// Non-finite value produced, or numeric domain violated. Always fatal.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error("numeric error: " + msg) {}
};

// Precondition or API-contract violation (bad argument, misuse of a consumed tape, ...).
struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& msg) : std::runtime_error("contract error: " + msg) {}
};

// Malformed input data; carries a 1-based line number when known.
struct ParseError : std::runtime_error {
    explicit ParseError(const std::string& msg) : std::runtime_error("parse error: " + msg) {}
    ParseError(const std::string& msg, std::size_t line)
        : std::runtime_error("parse error at line " + std::to_string(line) + ": " + msg) {}
};

// Rejection sampling exhausted its retry budget (graph too dense for the request).
struct SamplingError : std::runtime_error {
    explicit SamplingError(const std::string& msg) : std::runtime_error("sampling error: " + msg) {}
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw ContractError(msg);
}

}  // namespace radar
