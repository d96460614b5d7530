#pragma once

#include <string>
#include <vector>

#include "stacklqg/matrix.hpp"

namespace stacklqg {

/// Problem dimensions. l (leader-only observation dim) may be zero when a
/// scenario explicitly degrades the leader channel; every other dimension is
/// at least one.
struct Dimensions {
    int n = 0;  // state
    int k = 0;  // follower control
    int d = 0;  // leader control
    int l = 0;  // leader-only observation
    int m = 0;  // shared observation
    int w = 0;  // driving Wiener dimension of W
};

/// Raw game data: dynamics, observation channels, quadratic weights, horizon
/// and initial law.
struct ProblemSpec {
    Dimensions dims;
    Matrix A;      // n x n
    Matrix B_F;    // n x k
    Matrix B_L;    // n x d
    Matrix D;      // n x w
    Matrix H1;     // l x n
    Matrix H2;     // m x n
    Matrix Q_F;    // n x n
    Matrix Q_L;    // n x n
    Matrix R_FF;   // k x k
    Matrix R_FL;   // d x d, follower's weight on the leader control; inert for
                   // strategy synthesis, carried for cost evaluation
    Matrix R_LL;   // d x d
    Matrix R_LF;   // k x k
    Matrix G_F;    // n x n
    Matrix G_L;    // n x n
    double T = 0.0;
    Vector x0_mean;  // n
    Matrix x0_cov;   // n x n
};

struct ValidationFailure {
    std::string check;
    std::string message;
    double value = 0.0;  // offending eigenvalue (or asymmetry/parameter) if applicable
};

struct ValidationReport {
    bool passed = true;
    std::vector<ValidationFailure> failures;
};

namespace detail {

inline std::string shape_of(const Matrix& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

inline void require_shape(const Matrix& m, long rows, long cols, const std::string& name) {
    if (m.rows() != rows || m.cols() != cols)
        throw DimensionError("matrix " + name + ": expected shape " + std::to_string(rows) +
                             "x" + std::to_string(cols) + ", got " + shape_of(m));
}

}  // namespace detail

/// Exhaustive shape consistency between dims and every matrix field.
/// Throws DimensionError naming the field and both shapes.
inline void check_shapes(const ProblemSpec& s) {
    const auto& dm = s.dims;
    if (dm.n < 1 || dm.k < 1 || dm.d < 1 || dm.m < 1 || dm.w < 1 || dm.l < 0)
        throw DimensionError("dims: n,k,d,m,w must be >= 1 and l >= 0");
    detail::require_shape(s.A, dm.n, dm.n, "A");
    detail::require_shape(s.B_F, dm.n, dm.k, "B_F");
    detail::require_shape(s.B_L, dm.n, dm.d, "B_L");
    detail::require_shape(s.D, dm.n, dm.w, "D");
    detail::require_shape(s.H1, dm.l, dm.n, "H1");
    detail::require_shape(s.H2, dm.m, dm.n, "H2");
    detail::require_shape(s.Q_F, dm.n, dm.n, "Q_F");
    detail::require_shape(s.Q_L, dm.n, dm.n, "Q_L");
    detail::require_shape(s.R_FF, dm.k, dm.k, "R_FF");
    detail::require_shape(s.R_FL, dm.d, dm.d, "R_FL");
    detail::require_shape(s.R_LL, dm.d, dm.d, "R_LL");
    detail::require_shape(s.R_LF, dm.k, dm.k, "R_LF");
    detail::require_shape(s.G_F, dm.n, dm.n, "G_F");
    detail::require_shape(s.G_L, dm.n, dm.n, "G_L");
    if (s.x0_mean.size() != dm.n)
        throw DimensionError("vector x0_mean: expected size " + std::to_string(dm.n) +
                             ", got " + std::to_string(s.x0_mean.size()));
    detail::require_shape(s.x0_cov, dm.n, dm.n, "x0_cov");
}

namespace detail {

inline constexpr double kSymTol = 1e-12;   // relative Frobenius
inline constexpr double kPsdTol = 1e-10;   // relative, on min eigenvalue

inline void check_symmetric(const Matrix& m, const std::string& name, ValidationReport& r) {
    const double a = relative_asymmetry(m);
    if (a > kSymTol)
        r.failures.push_back({"symmetry", name + " not symmetric (relative asymmetry " +
                                              std::to_string(a) + ")", a});
}

inline void check_psd(const Matrix& m, const std::string& name, ValidationReport& r) {
    auto es = sym_eig(m);
    const double lo = es.eigenvalues().minCoeff();
    const double hi = es.eigenvalues().maxCoeff();
    if (lo < -kPsdTol * (1.0 + std::abs(hi)))
        r.failures.push_back(
            {"psd", name + " not PSD (min eigenvalue " + std::to_string(lo) + ")", lo});
}

inline void check_pd(const Matrix& m, const std::string& name, ValidationReport& r) {
    auto es = sym_eig(m);
    const double lo = es.eigenvalues().minCoeff();
    const double hi = es.eigenvalues().maxCoeff();
    if (!(lo > kPsdTol * (1.0 + std::abs(hi))))
        r.failures.push_back({"pd", name + " not positive definite (min eigenvalue " +
                                        std::to_string(lo) + ")", lo});
}

}  // namespace detail

/// Checks the standing weight assumptions (A1a for the follower, A1b for the
/// leader), symmetry of all declared-symmetric matrices, T > 0 and PSD of the
/// initial covariance. Violations become report entries, never exceptions.
inline ValidationReport validate_assumptions(const ProblemSpec& s) {
    ValidationReport r;
    // A1a
    detail::check_psd(s.Q_F, "Q_F", r);
    detail::check_psd(s.G_F, "G_F", r);
    detail::check_pd(s.R_FF, "R_FF", r);
    // A1b
    detail::check_psd(s.Q_L, "Q_L", r);
    detail::check_psd(s.G_L, "G_L", r);
    detail::check_pd(s.R_LL, "R_LL", r);
    detail::check_pd(s.R_LF, "R_LF", r);
    // declared-symmetric matrices
    for (auto [m, name] : {std::pair<const Matrix*, const char*>{&s.Q_F, "Q_F"},
                           {&s.Q_L, "Q_L"},
                           {&s.R_FF, "R_FF"},
                           {&s.R_FL, "R_FL"},
                           {&s.R_LL, "R_LL"},
                           {&s.R_LF, "R_LF"},
                           {&s.G_F, "G_F"},
                           {&s.G_L, "G_L"},
                           {&s.x0_cov, "x0_cov"}})
        detail::check_symmetric(*m, name, r);
    if (!(s.T > 0.0))
        r.failures.push_back({"horizon", "T must be positive, got " + std::to_string(s.T), s.T});
    {
        const double lo = min_eigenvalue(s.x0_cov);
        if (lo < -1e-12)
            r.failures.push_back({"psd", "x0_cov not PSD (min eigenvalue " +
                                             std::to_string(lo) + ")", lo});
    }
    r.passed = r.failures.empty();
    return r;
}

/// Government debt stabilization game: scalar debt deviation plus the constant
/// drift offset r*dbar + fbar - mbar as a second state coordinate (taken zero
/// here, i.e. the policy targets are mutually consistent). The fiscal
/// authority leads, the monetary authority follows.
///
/// The debt dynamics d(d_t) = (r d_t + f_t - m_t) dt written in deviation
/// coordinates give A = [[r, 1], [0, 0]]; the off-diagonal 1 carries the
/// constant offset coordinate into the debt equation.
inline ProblemSpec build_example_debt(double r, double rho1, double rho2, double lambda,
                                      double eta, double kappa, double T,
                                      double debt0_mean, double debt0_var) {
    if (!(T > 0.0)) throw ParameterError("build_example_debt: T must be positive");
    if (debt0_var < 0.0) throw ParameterError("build_example_debt: debt0_var must be >= 0");
    ProblemSpec s;
    s.dims = {2, 1, 1, 1, 1, 1};
    s.A = (Matrix(2, 2) << r, 1.0, 0.0, 0.0).finished();
    s.B_F = (Matrix(2, 1) << -1.0, 0.0).finished();
    s.B_L = (Matrix(2, 1) << 1.0, 0.0).finished();
    s.D = Matrix::Zero(2, 1);
    s.H1 = (Matrix(1, 2) << rho1, 0.0).finished();
    s.H2 = (Matrix(1, 2) << rho2, 0.0).finished();
    s.Q_F = Vector{{kappa, 0.0}}.asDiagonal();
    s.Q_L = Vector{{lambda, 0.0}}.asDiagonal();
    s.R_FF = Matrix::Constant(1, 1, 1.0);
    s.R_LL = Matrix::Constant(1, 1, 1.0);
    s.R_LF = Matrix::Constant(1, 1, eta);
    s.R_FL = Matrix::Zero(1, 1);
    s.G_F = Matrix::Zero(2, 2);
    s.G_L = Matrix::Zero(2, 2);
    s.T = T;
    s.x0_mean = (Vector(2) << debt0_mean, 0.0).finished();
    s.x0_cov = Vector{{debt0_var, 0.0}}.asDiagonal();
    check_shapes(s);
    return s;
}

/// Two-plant servo game with a command generator ds = L s dt. Plant 1 (leader)
/// tracks a combination of plant 2's state and the command, plant 2 (follower)
/// tracks plant 1. State is col(x1; x2; s). Plant dynamics matrices are taken
/// separately (A1, A2) so identical plants are the special case A1 == A2.
inline ProblemSpec build_example_servo(const Matrix& A1, const Matrix& A2, const Matrix& L,
                                       const Matrix& B1, const Matrix& B2, const Matrix& D1,
                                       const Matrix& D2, const Matrix& h1, const Matrix& h2,
                                       const Matrix& G11, const Matrix& G12, const Matrix& G21,
                                       const Matrix& G22, double theta, double T,
                                       const Vector& x0_mean, const Matrix& x0_cov) {
    if (!(theta > 0.0 && theta < 1.0))
        throw ParameterError("build_example_servo: theta must lie strictly inside (0,1), got " +
                             std::to_string(theta));
    if (!(T > 0.0)) throw ParameterError("build_example_servo: T must be positive");
    const long n1 = A1.rows(), n2 = A2.rows(), ns = L.rows();
    if (A1.cols() != n1 || A2.cols() != n2 || L.cols() != ns)
        throw DimensionError("build_example_servo: A1, A2, L must be square");
    const long n = n1 + n2 + ns;
    const long k = B2.cols(), d = B1.cols();
    const long w1 = D1.cols(), w2 = D2.cols();
    detail::require_shape(B1, n1, d, "B1");
    detail::require_shape(B2, n2, k, "B2");
    detail::require_shape(D1, n1, w1, "D1");
    detail::require_shape(D2, n2, w2, "D2");
    detail::require_shape(h1, h1.rows(), n1 + n2, "h1");
    detail::require_shape(h2, h2.rows(), n1 + n2, "h2");
    detail::require_shape(G21, n2, n1, "Gamma21");
    detail::require_shape(G22, n2, ns, "Gamma22");
    detail::require_shape(G12, n1, n2, "Gamma12");
    detail::require_shape(G11, n1, ns, "Gamma11");

    ProblemSpec s;
    s.dims = {static_cast<int>(n), static_cast<int>(k), static_cast<int>(d),
              static_cast<int>(h1.rows()), static_cast<int>(h2.rows()),
              static_cast<int>(w1 + w2)};
    s.A = Matrix::Zero(n, n);
    s.A.topLeftCorner(n1, n1) = A1;
    s.A.block(n1, n1, n2, n2) = A2;
    s.A.bottomRightCorner(ns, ns) = L;
    s.B_F = Matrix::Zero(n, k);
    s.B_F.block(n1, 0, n2, k) = B2;
    s.B_L = Matrix::Zero(n, d);
    s.B_L.topRows(n1) = B1;
    s.D = Matrix::Zero(n, w1 + w2);
    s.D.topLeftCorner(n1, w1) = D1;
    s.D.block(n1, w1, n2, w2) = D2;
    s.H1 = Matrix::Zero(h1.rows(), n);
    s.H1.leftCols(n1 + n2) = h1;
    s.H2 = Matrix::Zero(h2.rows(), n);
    s.H2.leftCols(n1 + n2) = h2;

    // The follower tracks Gamma21 x1 + Gamma22 s: Q_F = M'M, M = [-G21, I, -G22].
    Matrix M(n2, n);
    M << -G21, Matrix::Identity(n2, n2), -G22;
    s.Q_F = M.transpose() * M;
    // The leader tracks Gamma12 x2 + Gamma11 s: Q_L = N'N, N = [I, -G12, -G11].
    Matrix Nblk(n1, n);
    Nblk << Matrix::Identity(n1, n1), -G12, -G11;
    s.Q_L = Nblk.transpose() * Nblk;

    s.R_FF = Matrix::Identity(k, k);
    s.R_LF = theta * Matrix::Identity(k, k);
    s.R_LL = (1.0 - theta) * Matrix::Identity(d, d);
    s.R_FL = Matrix::Zero(d, d);
    s.G_F = Matrix::Zero(n, n);
    s.G_L = Matrix::Zero(n, n);
    s.T = T;
    s.x0_mean = x0_mean;
    s.x0_cov = x0_cov;
    check_shapes(s);
    return s;
}

// Named fixtures used across the test and verification suites.

inline ProblemSpec fix_scalar() {
    ProblemSpec s;
    s.dims = {1, 1, 1, 1, 1, 1};
    s.A = Matrix::Zero(1, 1);
    s.B_F = Matrix::Constant(1, 1, 1.0);
    s.B_L = Matrix::Constant(1, 1, 1.0);
    s.D = Matrix::Constant(1, 1, 1.0);
    s.H1 = Matrix::Constant(1, 1, 1.0);
    s.H2 = Matrix::Constant(1, 1, 1.0);
    s.Q_F = Matrix::Constant(1, 1, 1.0);
    s.Q_L = Matrix::Constant(1, 1, 1.0);
    s.R_FF = Matrix::Constant(1, 1, 1.0);
    s.R_LL = Matrix::Constant(1, 1, 1.0);
    s.R_LF = Matrix::Constant(1, 1, 1.0);
    s.R_FL = Matrix::Zero(1, 1);
    s.G_F = Matrix::Zero(1, 1);
    s.G_L = Matrix::Zero(1, 1);
    s.T = 1.0;
    s.x0_mean = Vector::Zero(1);
    s.x0_cov = Matrix::Constant(1, 1, 1.0);
    return s;
}

/// fix_scalar with all randomness removed. The initial mean is set to one so
/// the deterministic trajectories are nontrivial.
inline ProblemSpec fix_det() {
    ProblemSpec s = fix_scalar();
    s.D = Matrix::Zero(1, 1);
    s.x0_cov = Matrix::Zero(1, 1);
    s.x0_mean = Vector::Constant(1, 1.0);
    return s;
}

inline ProblemSpec fix_debt() {
    return build_example_debt(0.05, 1.0, 1.0, 1.0, 1.0, 1.0, 5.0, 1.0, 1.0);
}

}  // namespace stacklqg
