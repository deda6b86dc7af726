#pragma once

#include <stdexcept>
#include <string>

namespace curvforge {

// All failures surface as typed exceptions so callers (and the CLI) can map
// them to precise diagnostics instead of sifting through generic runtime_errors.

struct ShapeMismatch : std::invalid_argument {
    explicit ShapeMismatch(const std::string& what) : std::invalid_argument("shape mismatch: " + what) {}
};

struct NonFiniteOutput : std::runtime_error {
    explicit NonFiniteOutput(const std::string& what) : std::runtime_error("non-finite value: " + what) {}
};

struct SingularMatrix : std::runtime_error {
    explicit SingularMatrix(const std::string& what) : std::runtime_error("singular matrix: " + what) {}
};

struct NonPositiveEntry : std::domain_error {
    explicit NonPositiveEntry(const std::string& what) : std::domain_error("non-positive entry: " + what) {}
};

// A LayerNorm row with (near-)zero variance; the normalization is undefined there.
struct DegenerateRow : std::runtime_error {
    explicit DegenerateRow(const std::string& what) : std::runtime_error("degenerate row: " + what) {}
};

// A ReLU preactivation too close to 0 for finite differences to be trustworthy.
struct KinkProximity : std::runtime_error {
    explicit KinkProximity(const std::string& what) : std::runtime_error("ReLU kink proximity: " + what) {}
};

struct ConvergenceFailure : std::runtime_error {
    explicit ConvergenceFailure(const std::string& what) : std::runtime_error("iteration did not converge: " + what) {}
};

struct EmptyDataset : std::invalid_argument {
    explicit EmptyDataset(const std::string& what) : std::invalid_argument("empty dataset: " + what) {}
};

struct ParseError : std::runtime_error {
    ParseError(const std::string& what, long line) : std::runtime_error("parse error at line " + std::to_string(line) + ": " + what), line(line) {}
    long line;
};

} // namespace curvforge
