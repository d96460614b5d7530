#pragma once

#include <random>
#include <unsupported/Eigen/MatrixFunctions>

#include "stacklqg/problem.hpp"

namespace test_helpers {

using stacklqg::Matrix;
using stacklqg::Vector;

// Independent matrix exponential (scaling-and-squaring Pade) for transition
// matrix cross-checks.
inline Matrix expm(const Matrix& a) { return a.exp(); }

inline Matrix random_matrix(std::mt19937_64& rng, long rows, long cols, double scale = 1.0) {
    std::normal_distribution<double> g(0.0, scale);
    Matrix m(rows, cols);
    for (long r = 0; r < rows; ++r)
        for (long c = 0; c < cols; ++c) m(r, c) = g(rng);
    return m;
}

inline Vector random_vector(std::mt19937_64& rng, long size, double scale = 1.0) {
    std::normal_distribution<double> g(0.0, scale);
    Vector v(size);
    for (long i = 0; i < size; ++i) v[i] = g(rng);
    return v;
}

inline Matrix random_spd(std::mt19937_64& rng, long n, double shift = 0.5) {
    Matrix m = random_matrix(rng, n, n);
    return m * m.transpose() + shift * Matrix::Identity(n, n);
}

}  // namespace test_helpers
