#pragma once

#include <vector>

#include "stacklqg/augment.hpp"
#include "stacklqg/integrate.hpp"

namespace stacklqg {

struct FixedPointConfig {
    double theta_damp = 0.5;
    double tol_fp = 1e-8;   // sup-node Frobenius change between sweeps
    int max_iter = 200;
    bool throw_on_failure = true;
};

struct FixedPointReport {
    int iterations = 0;
    double final_delta = 0.0;
    bool converged = false;
    std::vector<double> deltas;  // change after each sweep
};

/// Time-gridded solutions of the coupled Riccati system: the control Riccati
/// P, the leader pair (Pdag, Xi) and the leader-filter Riccati Sigma, plus the
/// derived paths Pddag = P - Pdag and Xi11 (upper-left block of Xi).
struct RiccatiBundle {
    MatrixPath P;       // 2n x 2n, symmetric
    MatrixPath Pdag;    // 2n x 2n, not symmetric in general
    MatrixPath Pddag;   // 2n x 2n
    MatrixPath Sigma;   // 2n x 2n, symmetric PSD
    MatrixPath Xi;      // 4n x 4n, symmetric PSD
    MatrixPath Xi11;    // 2n x 2n
    FixedPointReport fp_report;
};

// Right-hand sides of the four flows, exposed so residual checks can
// differentiate solver output against the same expressions.

inline OdeRhs make_rhs_P(const AugmentedSystem& a) {
    const Matrix At = a.Abold.transpose();
    const Matrix S = a.Stilde + a.Shat;
    return [At, A = a.Abold, S, Q = a.Qbold](double, const Matrix& P) {
        return (-(At * P + P * A + P * S * P + Q)).eval();
    };
}

inline OdeRhs make_rhs_Sigma(const AugmentedSystem& a) {
    const Matrix HtH = a.H.transpose() * a.H;
    const Matrix DDt = a.Dbold * a.Dbold.transpose();
    return [A = a.Abold, HtH, DDt](double, const Matrix& S) {
        return (A * S + S * A.transpose() - S * HtH * S + DDt).eval();
    };
}

/// Backward flow of Pdag with the quadratic term in the unknown and the
/// coupling term P^ddag Xi11 H_F' H_F evaluated from supplied paths
/// (lagged iterate inside the Picard loop).
inline OdeRhs make_rhs_Pdag(const AugmentedSystem& a,
                            std::function<Matrix(double)> Pddag_at,
                            std::function<Matrix(double)> Xi11_at) {
    const Matrix HFtHF = a.H_F.transpose() * a.H_F;
    return [A = a.Abold, S = a.Stilde, Q = a.Qbold, HFtHF, Pddag_at = std::move(Pddag_at),
            Xi11_at = std::move(Xi11_at)](double t, const Matrix& P) {
        return (-(A.transpose() * P + P * A + P * S * P + Q +
                  Pddag_at(t) * Xi11_at(t) * HFtHF))
            .eval();
    };
}

/// Forward flow of the 4n x 4n covariance Xi of the error system, with the
/// correlated-noise correction on the shared channel. The blocks F, Gdag,
/// Gddag are assembled at the query time from the supplied Pdag and Sigma.
inline OdeRhs make_rhs_Xi(const AugmentedSystem& a, std::function<Matrix(double)> Pdag_at,
                          std::function<Matrix(double)> Sigma_at) {
    const int nn = a.nn();
    Matrix Dcheck = Matrix::Zero(2 * nn, a.dims.w);
    Dcheck.topRows(nn) = a.Dbold;
    Dcheck.bottomRows(nn) = a.Dbold;
    const Matrix DDt = Dcheck * Dcheck.transpose();
    Matrix Hcheck = Matrix::Zero(a.dims.m, 2 * nn);
    Hcheck.leftCols(nn) = a.H_F;
    return [a, nn, DDt, Hcheck, Pdag_at = std::move(Pdag_at), Sigma_at = std::move(Sigma_at)](
               double t, const Matrix& Xi) {
        const Matrix Sigma = Sigma_at(t);
        const Matrix F = detail::check_F(a, Pdag_at(t), Sigma);
        Matrix Gdag = Matrix::Zero(2 * nn, a.dims.l);
        Gdag.bottomRows(nn) = -Sigma * a.H_L.transpose();
        Matrix Gddag = Matrix::Zero(2 * nn, a.dims.m);
        Gddag.bottomRows(nn) = -Sigma * a.H_F.transpose();
        const Matrix gain = Xi * Hcheck.transpose() + Gddag;
        return (F * Xi + Xi * F.transpose() + DDt + Gdag * Gdag.transpose() +
                Gddag * Gddag.transpose() - gain * gain.transpose())
            .eval();
    };
}

namespace detail {

inline PostStep symmetrize_step() {
    return [](Matrix& m) { symmetrize(m); };
}

inline double sup_node_distance(const MatrixPath& x, const MatrixPath& y) {
    double d = 0.0;
    for (int j = 0; j <= x.grid.N; ++j) d = std::max(d, (x.at(j) - y.at(j)).norm());
    return d;
}

inline MatrixPath blend(const MatrixPath& fresh, const MatrixPath& old, double theta) {
    MatrixPath out = fresh;
    for (int j = 0; j <= out.grid.N; ++j)
        out.values[j] = theta * fresh.values[j] + (1.0 - theta) * old.values[j];
    if (fresh.has_derivs() && old.has_derivs())
        for (int j = 0; j <= out.grid.N; ++j)
            out.derivs[j] = theta * fresh.derivs[j] + (1.0 - theta) * old.derivs[j];
    return out;
}

inline MatrixPath extract_block(const MatrixPath& big, long r0, long c0, long rows, long cols) {
    std::vector<Matrix> v(big.grid.N + 1);
    for (int j = 0; j <= big.grid.N; ++j) v[j] = big.at(j).block(r0, c0, rows, cols);
    MatrixPath out(big.grid, std::move(v));
    if (big.has_derivs()) {
        out.derivs.resize(big.grid.N + 1);
        for (int j = 0; j <= big.grid.N; ++j) out.derivs[j] = big.derivs[j].block(r0, c0, rows, cols);
    }
    return out;
}

}  // namespace detail

/// Backward solve of the control Riccati from P(T) = Gbold.
inline MatrixPath solve_P(const AugmentedSystem& a, const TimeGrid& grid) {
    try {
        return integrate_matrix_ode(make_rhs_P(a), a.Gbold, Direction::Backward, grid,
                                    detail::symmetrize_step());
    } catch (const DivergenceError& e) {
        throw DivergenceError(
            "Riccati flow for P escaped in finite time near t=" + std::to_string(e.time) +
                " (node " + std::to_string(e.node) + ")",
            e.node, e.time);
    }
}

/// Forward solve of the filter Riccati from Sigma(0).
inline MatrixPath solve_Sigma(const AugmentedSystem& a, const TimeGrid& grid) {
    return integrate_matrix_ode(make_rhs_Sigma(a), a.Sigma0, Direction::Forward, grid,
                                detail::symmetrize_step());
}

/// Damped Picard iteration for the coupled forward-backward pair (Pdag, Xi).
///
/// Each sweep maps the current iterate X to F(X): integrate Xi forward with
/// coefficients from X, then integrate Pdag backward with the lagged coupling
/// term (P - X) Xi11 H_F' H_F. Convergence is declared when two successive
/// sweep outputs agree to tol_fp in sup-node Frobenius norm (so a vanishing
/// coupling converges on the confirming second sweep); otherwise the next
/// input is the damped blend theta*F(X) + (1-theta)*X. The returned Pdag is
/// the last sweep output and Xi is refreshed from it.
inline std::tuple<MatrixPath, MatrixPath, FixedPointReport> solve_leader_pair(
    const AugmentedSystem& a, const MatrixPath& P, const MatrixPath& Sigma,
    const TimeGrid& grid, const FixedPointConfig& cfg = {}) {
    require_same_grid(P.grid, grid, "solve_leader_pair");
    require_same_grid(Sigma.grid, grid, "solve_leader_pair");

    FixedPointReport report;
    MatrixPath input = P;        // damped iterate fed into each sweep
    MatrixPath prev_output = P;  // for the successive-output delta
    MatrixPath Pdag, Xi;

    auto sweep = [&](const MatrixPath& it) {
        MatrixPath xi = integrate_matrix_ode(
            make_rhs_Xi(a, [&](double t) { return it.eval(t); },
                        [&](double t) { return Sigma.eval(t); }),
            a.Xi0, Direction::Forward, grid, detail::symmetrize_step());
        const int nn = a.nn();
        MatrixPath xi11 = detail::extract_block(xi, 0, 0, nn, nn);
        MatrixPath pd = integrate_matrix_ode(
            make_rhs_Pdag(a, [&](double t) { return (P.eval(t) - it.eval(t)).eval(); },
                          [&](double t) { return xi11.eval(t); }),
            a.Gbold, Direction::Backward, grid);
        return std::pair{std::move(pd), std::move(xi)};
    };

    bool converged = false;
    for (int iter = 1; iter <= cfg.max_iter; ++iter) {
        auto [pd, xi] = sweep(input);
        const double delta = detail::sup_node_distance(pd, prev_output);
        report.deltas.push_back(delta);
        report.iterations = iter;
        report.final_delta = delta;
        Pdag = std::move(pd);
        Xi = std::move(xi);
        if (delta <= cfg.tol_fp) {
            converged = true;
            break;
        }
        input = detail::blend(Pdag, input, cfg.theta_damp);
        prev_output = Pdag;
    }
    report.converged = converged;
    if (!converged && cfg.throw_on_failure)
        throw FixedPointError("leader pair fixed point did not converge after " +
                                  std::to_string(report.iterations) +
                                  " iterations (final delta " +
                                  std::to_string(report.final_delta) + ")",
                              report.iterations, report.final_delta);

    // Refresh Xi from the final Pdag so the returned pair is mutually
    // consistent to O(tol_fp).
    Xi = integrate_matrix_ode(
        make_rhs_Xi(a, [&](double t) { return Pdag.eval(t); },
                    [&](double t) { return Sigma.eval(t); }),
        a.Xi0, Direction::Forward, grid, detail::symmetrize_step());
    return {std::move(Pdag), std::move(Xi), std::move(report)};
}

inline RiccatiBundle solve_riccati_bundle(const AugmentedSystem& a, const TimeGrid& grid,
                                          const FixedPointConfig& cfg = {}) {
    RiccatiBundle b;
    b.P = solve_P(a, grid);
    b.Sigma = solve_Sigma(a, grid);
    auto [pdag, xi, report] = solve_leader_pair(a, b.P, b.Sigma, grid, cfg);
    b.Pdag = std::move(pdag);
    b.Xi = std::move(xi);
    b.fp_report = std::move(report);
    const int nn = a.nn();
    b.Xi11 = detail::extract_block(b.Xi, 0, 0, nn, nn);
    // Pddag = P - Pdag nodewise, exact by construction.
    std::vector<Matrix> v(grid.N + 1);
    for (int j = 0; j <= grid.N; ++j) v[j] = b.P.at(j) - b.Pdag.at(j);
    b.Pddag = MatrixPath(grid, std::move(v));
    if (b.P.has_derivs() && b.Pdag.has_derivs()) {
        b.Pddag.derivs.resize(grid.N + 1);
        for (int j = 0; j <= grid.N; ++j) b.Pddag.derivs[j] = b.P.derivs[j] - b.Pdag.derivs[j];
    }
    return b;
}

/// Max Frobenius norm of the central-difference residual of a path against a
/// right-hand side, over interior nodes.
inline double riccati_residual(const MatrixPath& path, const OdeRhs& rhs,
                               const TimeGrid& grid) {
    require_same_grid(path.grid, grid, "riccati_residual");
    double worst = 0.0;
    for (int j = 1; j < grid.N; ++j) {
        const Matrix dot = (path.at(j + 1) - path.at(j - 1)) / (2.0 * grid.h);
        worst = std::max(worst, (dot - rhs(grid.t(j), path.at(j))).norm());
    }
    return worst;
}

}  // namespace stacklqg
