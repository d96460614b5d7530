#pragma once

#include "stacklqg/riccati.hpp"

namespace stacklqg {

/// Time-gridded feedback gains and closed-loop operators realizing the
/// equilibrium strategies. Everything a filter or simulator needs per node is
/// precomputed here; the observation maps are carried along so filter steps
/// are self-contained.
struct GainSchedule {
    MatrixPath K_F;             // k x 2n,  -R_FF^-1 B_F' [P_21, P_22]
    MatrixPath K_L_tilde;       // d x 2n,  -R_LL^-1 B_L' [Pdag_11, Pdag_12]
    MatrixPath K_L_hat;         // d x 2n,  -R_LL^-1 B_L' [P_11 - Pdag_11, P_12 - Pdag_12]
    MatrixPath A_hat_cl;        // 2n x 2n, Abold + (Stilde + Shat) P
    MatrixPath L_hat;           // 2n x m,  Xi11 H_F'
    MatrixPath A_tilde_cl;      // 2n x 2n, Abold + Stilde Pdag
    MatrixPath B_tilde_cross;   // 2n x 2n, (Stilde + Shat) P - Stilde Pdag
    MatrixPath L_tilde;         // 2n x (l+m), Sigma H'
    Matrix H_F;                 // m x 2n
    Matrix H;                   // (l+m) x 2n
    TimeGrid grid;
};

/// Filter state for one path: the follower's estimate x_hat and the leader's
/// estimate x_tilde of the augmented state, at a grid node.
struct FilterState {
    Vector x_hat;    // 2n
    Vector x_tilde;  // 2n
    int node = 0;
};

inline FilterState initial_filter_state(const AugmentedSystem& a) {
    return {a.gamma_mean, a.gamma_mean, 0};
}

inline GainSchedule build_gains(const RiccatiBundle& b, const AugmentedSystem& a) {
    if (!b.fp_report.converged)
        throw RefusalError("build_gains: Riccati bundle is not converged (final delta " +
                           std::to_string(b.fp_report.final_delta) + ")");
    const int n = a.n();
    const TimeGrid grid = b.P.grid;
    const int N = grid.N;
    const Matrix mKF = -(a.RFF_inv * a.B_F.transpose());  // k x n
    const Matrix mKL = -(a.RLL_inv * a.B_L.transpose());  // d x n
    const Matrix Ssum = a.Stilde + a.Shat;

    GainSchedule g;
    g.grid = grid;
    g.H_F = a.H_F;
    g.H = a.H;
    std::vector<Matrix> kf(N + 1), klt(N + 1), klh(N + 1), ahat(N + 1), lhat(N + 1),
        atld(N + 1), bcross(N + 1), ltld(N + 1);
    for (int j = 0; j <= N; ++j) {
        const Matrix& P = b.P.at(j);
        const Matrix& Pd = b.Pdag.at(j);
        kf[j] = mKF * P.bottomRows(n);
        klt[j] = mKL * Pd.topRows(n);
        klh[j] = mKL * (P.topRows(n) - Pd.topRows(n));
        ahat[j] = a.Abold + Ssum * P;
        lhat[j] = b.Xi11.at(j) * a.H_F.transpose();
        atld[j] = a.Abold + a.Stilde * Pd;
        bcross[j] = Ssum * P - a.Stilde * Pd;
        ltld[j] = b.Sigma.at(j) * a.H.transpose();
    }
    g.K_F = MatrixPath(grid, std::move(kf));
    g.K_L_tilde = MatrixPath(grid, std::move(klt));
    g.K_L_hat = MatrixPath(grid, std::move(klh));
    g.A_hat_cl = MatrixPath(grid, std::move(ahat));
    g.L_hat = MatrixPath(grid, std::move(lhat));
    g.A_tilde_cl = MatrixPath(grid, std::move(atld));
    g.B_tilde_cross = MatrixPath(grid, std::move(bcross));
    g.L_tilde = MatrixPath(grid, std::move(ltld));
    return g;
}

/// Advances the follower's Kalman-Bucy filter by one Euler step driven by the
/// shared-channel observation increment. Only x_hat moves; x_tilde is carried.
inline FilterState follower_filter_step(const FilterState& s, const Vector& dZ2,
                                        const GainSchedule& g, double h) {
    if (s.node >= g.grid.N) throw GridError("follower_filter_step: node past horizon");
    const int j = s.node;
    FilterState out = s;
    const Vector innovation = dZ2 - g.H_F * s.x_hat * h;
    out.x_hat = s.x_hat + g.A_hat_cl.at(j) * s.x_hat * h + g.L_hat.at(j) * innovation;
    out.node = j + 1;
    return out;
}

/// Advances the leader's filter by one Euler step. The follower-filter value
/// x_hat at the same node is an input: the leader reconstructs it from the
/// shared channel, which makes the information nesting explicit.
inline FilterState leader_filter_step(const FilterState& s, const Vector& dZ1,
                                      const Vector& dZ2, const Vector& x_hat,
                                      const GainSchedule& g, double h) {
    if (s.node >= g.grid.N) throw GridError("leader_filter_step: node past horizon");
    const int j = s.node;
    Vector dZ(dZ1.size() + dZ2.size());
    dZ << dZ1, dZ2;
    FilterState out = s;
    const Vector innovation = dZ - g.H * s.x_tilde * h;
    out.x_tilde = s.x_tilde +
                  (g.A_tilde_cl.at(j) * s.x_tilde + g.B_tilde_cross.at(j) * x_hat) * h +
                  g.L_tilde.at(j) * innovation;
    out.node = j + 1;
    return out;
}

inline Vector control_follower(const GainSchedule& g, int node, const Vector& x_hat) {
    return g.K_F.at(node) * x_hat;
}

inline Vector control_leader(const GainSchedule& g, int node, const Vector& x_tilde,
                             const Vector& x_hat) {
    return g.K_L_tilde.at(node) * x_tilde + g.K_L_hat.at(node) * x_hat;
}

}  // namespace stacklqg
