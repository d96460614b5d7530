#pragma once

#include <functional>
#include <vector>

#include "stacklqg/grid.hpp"

namespace stacklqg {

enum class Direction { Forward, Backward };

using OdeRhs = std::function<Matrix(double, const Matrix&)>;
using Generator = std::function<Matrix(double)>;
using PostStep = std::function<void(Matrix&)>;

namespace detail {

// One classical RK4 step from (t, y) with signed step size h.
inline Matrix rk4_step(const OdeRhs& rhs, double t, const Matrix& y, double h,
                       const Matrix& k1) {
    Matrix k2 = rhs(t + 0.5 * h, y + (0.5 * h) * k1);
    Matrix k3 = rhs(t + 0.5 * h, y + (0.5 * h) * k2);
    Matrix k4 = rhs(t + h, y + h * k3);
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

}  // namespace detail

/// Classical fixed-step RK4 over the grid. Forward starts at values[0] =
/// boundary, backward starts at values[N] = boundary and runs the same stepper
/// in reversed time. Node derivatives (the rhs at each stored node) are
/// recorded on the returned path so it can be queried between nodes at the
/// integrator's own order.
inline MatrixPath integrate_matrix_ode(const OdeRhs& rhs, const Matrix& boundary,
                                       Direction direction, const TimeGrid& grid,
                                       const PostStep& post_step = nullptr) {
    const int N = grid.N;
    std::vector<Matrix> values(N + 1);
    std::vector<Matrix> derivs(N + 1);

    auto check = [&](const Matrix& m, int node) {
        if (!all_finite(m))
            throw DivergenceError("matrix ODE produced a non-finite value at node " +
                                      std::to_string(node) + " (t=" +
                                      std::to_string(grid.t(node)) + ")",
                                  node, grid.t(node));
    };

    if (direction == Direction::Forward) {
        values[0] = boundary;
        for (int j = 0; j < N; ++j) {
            derivs[j] = rhs(grid.t(j), values[j]);
            values[j + 1] = detail::rk4_step(rhs, grid.t(j), values[j], grid.h, derivs[j]);
            if (post_step) post_step(values[j + 1]);
            check(values[j + 1], j + 1);
        }
        derivs[N] = rhs(grid.t(N), values[N]);
    } else {
        values[N] = boundary;
        for (int j = N; j > 0; --j) {
            derivs[j] = rhs(grid.t(j), values[j]);
            values[j - 1] = detail::rk4_step(rhs, grid.t(j), values[j], -grid.h, derivs[j]);
            if (post_step) post_step(values[j - 1]);
            check(values[j - 1], j - 1);
        }
        derivs[0] = rhs(grid.t(0), values[0]);
    }

    MatrixPath path(grid, std::move(values));
    path.derivs = std::move(derivs);
    return path;
}

/// Transition matrix of dPhi/ds = generator(s) Phi, Phi(t_j) = I, propagated
/// node to node with the same RK4 stepper. Returns the whole path
/// Phi(t_k, t_j) for k = j..N.
inline std::vector<Matrix> transition_path(const Generator& generator, const TimeGrid& grid,
                                           int from_index) {
    if (from_index < 0 || from_index > grid.N)
        throw GridError("transition_path: node index out of range");
    const long n = generator(grid.t(from_index)).rows();
    OdeRhs rhs = [&](double s, const Matrix& m) { return (generator(s) * m).eval(); };
    std::vector<Matrix> out;
    out.reserve(grid.N - from_index + 1);
    Matrix phi = Matrix::Identity(n, n);
    out.push_back(phi);
    for (int k = from_index; k < grid.N; ++k) {
        Matrix k1 = rhs(grid.t(k), phi);
        phi = detail::rk4_step(rhs, grid.t(k), phi, grid.h, k1);
        if (!all_finite(phi))
            throw DivergenceError("transition matrix diverged at node " + std::to_string(k + 1),
                                  k + 1, grid.t(k + 1));
        out.push_back(phi);
    }
    return out;
}

/// Phi(t_i, t_j) for i >= j.
inline Matrix transition_matrix(const Generator& generator, const TimeGrid& grid,
                                int from_index, int to_index) {
    if (to_index < from_index) throw GridError("transition_matrix: requires to_index >= from_index");
    if (from_index < 0 || to_index > grid.N)
        throw GridError("transition_matrix: node index out of range");
    const long n = generator(grid.t(from_index)).rows();
    OdeRhs rhs = [&](double s, const Matrix& m) { return (generator(s) * m).eval(); };
    Matrix phi = Matrix::Identity(n, n);
    for (int k = from_index; k < to_index; ++k) {
        Matrix k1 = rhs(grid.t(k), phi);
        phi = detail::rk4_step(rhs, grid.t(k), phi, grid.h, k1);
        if (!all_finite(phi))
            throw DivergenceError("transition matrix diverged at node " + std::to_string(k + 1),
                                  k + 1, grid.t(k + 1));
    }
    return phi;
}

/// One Euler-Maruyama update. dW must be drawn externally with covariance h*I.
inline Vector euler_maruyama_step(const Vector& state, const Vector& drift,
                                  const Matrix& diffusion, const Vector& dW, double h) {
    return state + drift * h + diffusion * dW;
}

/// Trapezoidal rule over the grid nodes.
inline double trapezoid(const std::vector<double>& values, const TimeGrid& grid) {
    if (static_cast<int>(values.size()) != grid.N + 1)
        throw GridError("trapezoid: expected N+1 samples");
    double acc = 0.5 * (values.front() + values.back());
    for (int j = 1; j < grid.N; ++j) acc += values[j];
    return acc * grid.h;
}

/// Trapezoid over a sub-range of nodes [j0, j1].
inline double trapezoid_range(const std::vector<double>& values, const TimeGrid& grid,
                              int j0, int j1) {
    if (j0 < 0 || j1 > grid.N || j1 < j0) throw GridError("trapezoid_range: bad node range");
    if (j1 == j0) return 0.0;
    double acc = 0.5 * (values[j0] + values[j1]);
    for (int j = j0 + 1; j < j1; ++j) acc += values[j];
    return acc * grid.h;
}

}  // namespace stacklqg
