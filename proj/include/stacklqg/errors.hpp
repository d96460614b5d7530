#pragma once

#include <stdexcept>
#include <string>

namespace stacklqg {

// Error taxonomy. Each class maps to one failure mode of the pipeline so
// callers (and the CLI exit-code table) can dispatch on type.

struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DimensionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ParameterError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InversionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct GridError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DivergenceError : std::runtime_error {
    DivergenceError(const std::string& msg, int node, double time)
        : std::runtime_error(msg), node(node), time(time) {}
    int node;
    double time;
};

struct FixedPointError : std::runtime_error {
    FixedPointError(const std::string& msg, int iterations, double final_delta)
        : std::runtime_error(msg), iterations(iterations), final_delta(final_delta) {}
    int iterations;
    double final_delta;
};

// Thrown when an operation requires a converged Riccati bundle but got one
// whose fixed-point report says otherwise.
struct RefusalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct SimulationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace stacklqg
