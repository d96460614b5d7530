#pragma once

#include "stacklqg/grid.hpp"
#include "stacklqg/problem.hpp"

namespace stacklqg {

/// Bold-face operators of the 2n-dimensional augmented system obtained by
/// stacking the state with the leader's auxiliary adjoint-of-adjoint state Y
/// (deterministically zero at t = 0). All downstream solves run on these.
struct AugmentedSystem {
    Dimensions dims;     // original problem dimensions
    Matrix Abold;        // 2n x 2n, diag(A, A)
    Matrix Stilde;       // 2n x 2n, diag(-B_L R_LL^-1 B_L', 0)
    Matrix Shat;         // 2n x 2n, symmetric, zero upper-left block
    Matrix Qbold;        // 2n x 2n, [[Q_L, Q_F], [Q_F, 0]]
    Matrix Gbold;        // 2n x 2n, [[G_L, G_F], [G_F, 0]]
    Matrix Dbold;        // 2n x w, col(D; 0)
    Matrix H;            // (l+m) x 2n, rows(H_L; H_F)
    Matrix H_L;          // l x 2n, [H1, 0]
    Matrix H_F;          // m x 2n, [H2, 0]
    Vector gamma_mean;   // 2n, col(x0_mean; 0)
    Matrix Sigma0;       // 2n x 2n, x0_cov embedded top-left
    Matrix Xi0;          // 4n x 4n, [[Sigma0, Sigma0], [Sigma0, Sigma0]]

    // Cached pieces reused by gain synthesis and the oracles.
    Matrix RFF_inv;      // k x k
    Matrix RLL_inv;      // d x d
    Matrix B_F;          // n x k
    Matrix B_L;          // n x d

    int n() const { return dims.n; }
    int nn() const { return 2 * dims.n; }
};

inline AugmentedSystem augment(const ProblemSpec& s) {
    check_shapes(s);
    const int n = s.dims.n;
    const int l = s.dims.l;
    const int m = s.dims.m;

    AugmentedSystem a;
    a.dims = s.dims;
    a.RFF_inv = spd_inverse(s.R_FF, "R_FF");
    a.RLL_inv = spd_inverse(s.R_LL, "R_LL");
    a.B_F = s.B_F;
    a.B_L = s.B_L;

    a.Abold = Matrix::Zero(2 * n, 2 * n);
    a.Abold.topLeftCorner(n, n) = s.A;
    a.Abold.bottomRightCorner(n, n) = s.A;

    const Matrix SF = s.B_F * a.RFF_inv * s.B_F.transpose();  // B_F R_FF^-1 B_F'
    const Matrix SL = s.B_L * a.RLL_inv * s.B_L.transpose();

    a.Stilde = Matrix::Zero(2 * n, 2 * n);
    a.Stilde.topLeftCorner(n, n) = -SL;

    a.Shat = Matrix::Zero(2 * n, 2 * n);
    a.Shat.topRightCorner(n, n) = -SF;
    a.Shat.bottomLeftCorner(n, n) = -SF;
    a.Shat.bottomRightCorner(n, n) =
        s.B_F * a.RFF_inv * s.R_LF * a.RFF_inv * s.B_F.transpose();

    a.Qbold = Matrix::Zero(2 * n, 2 * n);
    a.Qbold.topLeftCorner(n, n) = s.Q_L;
    a.Qbold.topRightCorner(n, n) = s.Q_F;
    a.Qbold.bottomLeftCorner(n, n) = s.Q_F;

    a.Gbold = Matrix::Zero(2 * n, 2 * n);
    a.Gbold.topLeftCorner(n, n) = s.G_L;
    a.Gbold.topRightCorner(n, n) = s.G_F;
    a.Gbold.bottomLeftCorner(n, n) = s.G_F;

    a.Dbold = Matrix::Zero(2 * n, s.dims.w);
    a.Dbold.topRows(n) = s.D;

    a.H_L = Matrix::Zero(l, 2 * n);
    if (l > 0) a.H_L.leftCols(n) = s.H1;
    a.H_F = Matrix::Zero(m, 2 * n);
    a.H_F.leftCols(n) = s.H2;
    a.H = Matrix::Zero(l + m, 2 * n);
    if (l > 0) a.H.topRows(l) = a.H_L;
    a.H.bottomRows(m) = a.H_F;

    a.gamma_mean = Vector::Zero(2 * n);
    a.gamma_mean.head(n) = s.x0_mean;

    a.Sigma0 = Matrix::Zero(2 * n, 2 * n);
    a.Sigma0.topLeftCorner(n, n) = s.x0_cov;

    a.Xi0 = Matrix::Zero(4 * n, 4 * n);
    a.Xi0.topLeftCorner(2 * n, 2 * n) = a.Sigma0;
    a.Xi0.topRightCorner(2 * n, 2 * n) = a.Sigma0;
    a.Xi0.bottomLeftCorner(2 * n, 2 * n) = a.Sigma0;
    a.Xi0.bottomRightCorner(2 * n, 2 * n) = a.Sigma0;
    return a;
}

/// Time-gridded blocks of the 4n-dimensional error system that drives the
/// follower-side covariance Xi: state col(boldX; e) with e the leader's
/// filtering error, observed through the shared channel.
struct CheckSystemPath {
    MatrixPath F;        // 4n x 4n
    Matrix Dcheck;       // 4n x w, col(Dbold; Dbold)
    MatrixPath Gdag;     // 4n x l, col(0; -Sigma H_L')
    MatrixPath Gddag;    // 4n x m, col(0; -Sigma H_F')
    Matrix Hcheck_F;     // m x 4n, [H_F, 0]
};

namespace detail {

inline Matrix check_F(const AugmentedSystem& a, const Matrix& Pdag, const Matrix& Sigma) {
    const int nn = a.nn();
    Matrix F = Matrix::Zero(2 * nn, 2 * nn);
    const Matrix SP = a.Stilde * Pdag;
    F.topLeftCorner(nn, nn) = a.Abold + SP;
    F.topRightCorner(nn, nn) = -SP;
    F.bottomRightCorner(nn, nn) = a.Abold - Sigma * a.H.transpose() * a.H;
    return F;
}

}  // namespace detail

inline CheckSystemPath build_check_system(const AugmentedSystem& a, const MatrixPath& Pdag,
                                          const MatrixPath& Sigma) {
    require_same_grid(Pdag.grid, Sigma.grid, "build_check_system");
    const int nn = a.nn();
    const int N = Pdag.grid.N;
    CheckSystemPath cs;
    std::vector<Matrix> f(N + 1), gd(N + 1), gdd(N + 1);
    for (int j = 0; j <= N; ++j) {
        f[j] = detail::check_F(a, Pdag.at(j), Sigma.at(j));
        gd[j] = Matrix::Zero(2 * nn, a.dims.l);
        gd[j].bottomRows(nn) = -Sigma.at(j) * a.H_L.transpose();
        gdd[j] = Matrix::Zero(2 * nn, a.dims.m);
        gdd[j].bottomRows(nn) = -Sigma.at(j) * a.H_F.transpose();
    }
    cs.F = MatrixPath(Pdag.grid, std::move(f));
    cs.Gdag = MatrixPath(Pdag.grid, std::move(gd));
    cs.Gddag = MatrixPath(Pdag.grid, std::move(gdd));
    cs.Dcheck = Matrix::Zero(2 * nn, a.dims.w);
    cs.Dcheck.topRows(nn) = a.Dbold;
    cs.Dcheck.bottomRows(nn) = a.Dbold;
    cs.Hcheck_F = Matrix::Zero(a.dims.m, 2 * nn);
    cs.Hcheck_F.leftCols(nn) = a.H_F;
    return cs;
}

}  // namespace stacklqg
