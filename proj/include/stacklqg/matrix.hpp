#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>

#include "stacklqg/errors.hpp"

namespace stacklqg {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

inline void symmetrize(Matrix& m) { m = 0.5 * (m + m.transpose()).eval(); }

inline double asymmetry(const Matrix& m) { return (m - m.transpose()).norm(); }

// Relative Frobenius asymmetry, used by the symmetry checks.
inline double relative_asymmetry(const Matrix& m) {
    const double scale = m.norm();
    return scale > 0.0 ? asymmetry(m) / scale : 0.0;
}

inline Eigen::SelfAdjointEigenSolver<Matrix> sym_eig(const Matrix& m) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (m + m.transpose()));
    return es;
}

inline double min_eigenvalue(const Matrix& m) { return sym_eig(m).eigenvalues().minCoeff(); }
inline double max_eigenvalue(const Matrix& m) { return sym_eig(m).eigenvalues().maxCoeff(); }

// Symmetric PSD square root; eigenvalues below zero are clamped so that a
// numerically semidefinite input (e.g. a singular covariance) is accepted.
inline Matrix psd_sqrt(const Matrix& m) {
    auto es = sym_eig(m);
    Vector d = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
}

// Inverse of a symmetric positive definite matrix via LLT, guarded by a
// condition-number threshold (ratio of extreme eigenvalues).
inline Matrix spd_inverse(const Matrix& m, const std::string& name,
                          double cond_threshold = 1e12) {
    auto es = sym_eig(m);
    const double lo = es.eigenvalues().minCoeff();
    const double hi = es.eigenvalues().maxCoeff();
    if (!(lo > 0.0) || hi / lo > cond_threshold) {
        throw InversionError(name + " is numerically singular (condition number " +
                             std::to_string(lo > 0.0 ? hi / lo : std::nan("")) + ")");
    }
    return m.llt().solve(Matrix::Identity(m.rows(), m.cols()));
}

}  // namespace stacklqg
