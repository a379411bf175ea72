#pragma once

#include <stdexcept>
#include <string>

namespace qrfit {

/// Bad config, bad command line, unknown subcommand. CLI exit code 2.
struct ParseError : std::runtime_error {
    explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Violated data invariant (bad mesh, non-unit quaternion, ...). CLI exit code 3.
struct InvariantError : std::runtime_error {
    explicit InvariantError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Optimization diverged past the abort guard. CLI exit code 4.
struct DivergenceError : std::runtime_error {
    explicit DivergenceError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace qrfit
