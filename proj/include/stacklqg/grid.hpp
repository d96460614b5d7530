#pragma once

#include <algorithm>
#include <vector>

#include "stacklqg/errors.hpp"
#include "stacklqg/matrix.hpp"

namespace stacklqg {

/// Uniform grid on [0, T] with N steps and N+1 nodes t_j = j*h, h = T/N.
struct TimeGrid {
    double T = 0.0;
    int N = 0;
    double h = 0.0;

    TimeGrid() = default;
    TimeGrid(double horizon, int steps) : T(horizon), N(steps), h(horizon / steps) {
        if (!(horizon > 0.0)) throw GridError("TimeGrid: horizon must be positive");
        if (steps < 2) throw GridError("TimeGrid: need at least 2 steps");
    }

    double t(int j) const { return j == N ? T : j * h; }

    bool same_as(const TimeGrid& other) const { return T == other.T && N == other.N; }
};

/// Matrix-valued path sampled on a TimeGrid. If node derivatives are present
/// (solvers record the ODE right-hand side at each node), off-grid queries use
/// cubic Hermite interpolation, otherwise linear. The node values themselves
/// are exact solver output either way.
struct MatrixPath {
    TimeGrid grid;
    std::vector<Matrix> values;   // N+1 entries, one fixed shape
    std::vector<Matrix> derivs;   // empty, or N+1 entries matching values

    MatrixPath() = default;
    MatrixPath(const TimeGrid& g, std::vector<Matrix> v) : grid(g), values(std::move(v)) {
        if (static_cast<int>(values.size()) != grid.N + 1)
            throw GridError("MatrixPath: expected N+1 values");
    }

    int nodes() const { return static_cast<int>(values.size()); }
    const Matrix& at(int j) const { return values.at(j); }
    Matrix& at(int j) { return values.at(j); }
    long rows() const { return values.empty() ? 0 : values.front().rows(); }
    long cols() const { return values.empty() ? 0 : values.front().cols(); }

    bool has_derivs() const { return !derivs.empty(); }

    /// Value at arbitrary time in [0, T] (clamped).
    Matrix eval(double time) const {
        const double tc = std::clamp(time, 0.0, grid.T);
        const double u = tc / grid.h;
        int j = std::min(static_cast<int>(u), grid.N - 1);
        const double s = u - j;  // in [0, 1]
        if (s == 0.0) return values[j];
        const Matrix& a = values[j];
        const Matrix& b = values[j + 1];
        if (!has_derivs()) return (1.0 - s) * a + s * b;
        const Matrix& ma = derivs[j];
        const Matrix& mb = derivs[j + 1];
        const double s2 = s * s, s3 = s2 * s;
        return (2 * s3 - 3 * s2 + 1) * a + ((s3 - 2 * s2 + s) * grid.h) * ma +
               (-2 * s3 + 3 * s2) * b + ((s3 - s2) * grid.h) * mb;
    }
};

inline void require_same_grid(const TimeGrid& a, const TimeGrid& b, const char* what) {
    if (!a.same_as(b)) throw GridError(std::string("grid mismatch in ") + what);
}

}  // namespace stacklqg
