#pragma once

#include <atomic>
#include <cstdint>
#include <mutex>
#include <optional>
#include <thread>
#include <vector>

#include "stacklqg/rng.hpp"
#include "stacklqg/strategies.hpp"

namespace stacklqg {

/// One simulated closed-loop path. Observation processes are materialized as
/// cumulative sums of increments, starting at zero.
struct Trajectory {
    TimeGrid grid;
    std::vector<Vector> X;        // physical state, n
    std::vector<Vector> Y;        // auxiliary state, n
    std::vector<Vector> x_hat;    // 2n
    std::vector<Vector> x_tilde;  // 2n
    std::vector<Vector> u_F;      // k
    std::vector<Vector> u_L;      // d
    std::vector<Vector> Z1;       // l
    std::vector<Vector> Z2;       // m
    std::uint64_t master_seed = 0;
    std::uint64_t path_index = 0;
};

struct LagAutocorr {
    int lag = 0;
    Vector rho_follower;   // per component of the shared-channel innovation
    Vector rho_leader;     // per component of the stacked innovation
    double terms_follower = 0;  // number of aggregated lag products
    double terms_leader = 0;
};

struct FilterDiagnostics {
    MatrixPath err_cov_hat;          // ensemble covariance of boldX - x_hat, 2n x 2n
    MatrixPath err_cov_tilde;        // ensemble covariance of boldX - x_tilde
    std::vector<Vector> err_mean_hat;    // ensemble mean of boldX - x_hat per node
    std::vector<Vector> err_mean_tilde;
    std::vector<LagAutocorr> innovation_autocorr;  // lags 1..3
};

struct CostReport {
    double J_F_mean = 0.0;
    double J_L_mean = 0.0;
    std::optional<double> J_F_se;  // absent when M == 1
    std::optional<double> J_L_se;
    int M = 0;
    FilterDiagnostics filter_stats;
    // Per-path costs, kept for paired (common-random-number) comparisons.
    std::vector<double> per_path_J_F;
    std::vector<double> per_path_J_L;
};

/// Constant gain perturbation applied on top of the equilibrium schedule.
/// Empty matrices mean "no perturbation" for that slot.
struct GainPerturbation {
    Matrix dK_F;        // k x 2n, applied to x_hat
    Matrix dK_L_tilde;  // d x 2n, applied to x_tilde
    Matrix dK_L_hat;    // d x 2n, applied to x_hat
};

struct MonteCarloOptions {
    int threads = 1;
    bool diagnostics = true;
    GainPerturbation perturbation;
};

namespace detail {

/// Everything shared across paths of one run, precomputed once.
struct SimPlan {
    const AugmentedSystem* aug = nullptr;
    const GainSchedule* gains = nullptr;
    TimeGrid grid;
    Matrix A, B_F, B_L, Dw, H1, H2;
    Matrix sqrt_x0;                  // n x n PSD square root of x0_cov
    Vector x0_mean;                  // n
    std::vector<Matrix> ShatP_low;   // n x 2n: bottom rows of Shat * P, per node
    std::vector<Matrix> KF;          // effective gains (perturbation folded in)
    std::vector<Matrix> KLt;
    std::vector<Matrix> KLh;
};

inline SimPlan make_plan(const ProblemSpec& spec, const AugmentedSystem& aug,
                         const RiccatiBundle& bundle, const GainSchedule& gains,
                         const GainPerturbation& pert = {}) {
    require_same_grid(bundle.P.grid, gains.grid, "make_plan");
    SimPlan p;
    p.aug = &aug;
    p.gains = &gains;
    p.grid = gains.grid;
    p.A = spec.A;
    p.B_F = spec.B_F;
    p.B_L = spec.B_L;
    p.Dw = spec.D;
    p.H1 = spec.H1;
    p.H2 = spec.H2;
    p.sqrt_x0 = psd_sqrt(spec.x0_cov);
    p.x0_mean = spec.x0_mean;
    const int n = aug.n();
    const int N = p.grid.N;
    p.ShatP_low.resize(N + 1);
    p.KF.resize(N + 1);
    p.KLt.resize(N + 1);
    p.KLh.resize(N + 1);
    for (int j = 0; j <= N; ++j) {
        p.ShatP_low[j] = (aug.Shat * bundle.P.at(j)).bottomRows(n);
        p.KF[j] = pert.dK_F.size() ? (gains.K_F.at(j) + pert.dK_F).eval() : gains.K_F.at(j);
        p.KLt[j] = pert.dK_L_tilde.size() ? (gains.K_L_tilde.at(j) + pert.dK_L_tilde).eval()
                                          : gains.K_L_tilde.at(j);
        p.KLh[j] = pert.dK_L_hat.size() ? (gains.K_L_hat.at(j) + pert.dK_L_hat).eval()
                                        : gains.K_L_hat.at(j);
    }
    return p;
}

}  // namespace detail

/// Simulates one closed-loop path: Euler-Maruyama truth dynamics, observation
/// increments, both filters and the feedback controls, all driven by the
/// counter-based generator keyed to (master_seed, path_index).
inline Trajectory simulate_path(const detail::SimPlan& plan, std::uint64_t master_seed,
                                std::uint64_t path_index) {
    const AugmentedSystem& aug = *plan.aug;
    const GainSchedule& gains = *plan.gains;
    const TimeGrid& grid = plan.grid;
    const int N = grid.N;
    const double h = grid.h;
    const double sqrt_h = std::sqrt(h);
    const int n = aug.dims.n, k = aug.dims.k, d = aug.dims.d;
    const int l = aug.dims.l, m = aug.dims.m, w = aug.dims.w;

    PathNoise noise(master_seed, path_index);

    Trajectory tr;
    tr.grid = grid;
    tr.master_seed = master_seed;
    tr.path_index = path_index;
    tr.X.resize(N + 1);
    tr.Y.resize(N + 1);
    tr.x_hat.resize(N + 1);
    tr.x_tilde.resize(N + 1);
    tr.u_F.resize(N + 1);
    tr.u_L.resize(N + 1);
    tr.Z1.resize(N + 1);
    tr.Z2.resize(N + 1);

    Vector X = plan.x0_mean + plan.sqrt_x0 * noise.normals(0, NoiseChannel::InitialState, n);
    Vector Y = Vector::Zero(n);
    FilterState fs = initial_filter_state(aug);
    Vector Z1 = Vector::Zero(l);
    Vector Z2 = Vector::Zero(m);

    for (int j = 0; j <= N; ++j) {
        tr.X[j] = X;
        tr.Y[j] = Y;
        tr.x_hat[j] = fs.x_hat;
        tr.x_tilde[j] = fs.x_tilde;
        tr.Z1[j] = Z1;
        tr.Z2[j] = Z2;
        const Vector u_F = plan.KF[j] * fs.x_hat;
        const Vector u_L = plan.KLt[j] * fs.x_tilde + plan.KLh[j] * fs.x_hat;
        tr.u_F[j] = u_F;
        tr.u_L[j] = u_L;
        if (j == N) break;

        const Vector dW = sqrt_h * noise.normals(j, NoiseChannel::ProcessW, w);
        const Vector dV1 = sqrt_h * noise.normals(j, NoiseChannel::ObsV1, l);
        const Vector dV2 = sqrt_h * noise.normals(j, NoiseChannel::ObsV2, m);
        const Vector dZ1 = plan.H1 * X * h + dV1;
        const Vector dZ2 = plan.H2 * X * h + dV2;

        const Vector X_next =
            euler_maruyama_step(X, plan.A * X + plan.B_F * u_F + plan.B_L * u_L, plan.Dw, dW, h);
        const Vector Y_next = Y + (plan.A * Y + plan.ShatP_low[j] * fs.x_hat) * h;

        FilterState next = follower_filter_step(fs, dZ2, gains, h);
        next.x_tilde = leader_filter_step(fs, dZ1, dZ2, fs.x_hat, gains, h).x_tilde;

        if (!X_next.allFinite() || !next.x_hat.allFinite() || !next.x_tilde.allFinite())
            throw DivergenceError("simulated path diverged at node " + std::to_string(j + 1),
                                  j + 1, grid.t(j + 1));

        X = X_next;
        Y = Y_next;
        fs = next;
        Z1 += dZ1;
        Z2 += dZ2;
    }
    return tr;
}

/// Convenience overload building the per-run plan internally.
inline Trajectory simulate_path(const ProblemSpec& spec, const AugmentedSystem& aug,
                                const RiccatiBundle& bundle, const GainSchedule& gains,
                                const TimeGrid& grid, std::uint64_t master_seed,
                                std::uint64_t path_index = 0) {
    require_same_grid(grid, gains.grid, "simulate_path");
    auto plan = detail::make_plan(spec, aug, bundle, gains);
    return simulate_path(plan, master_seed, path_index);
}

/// Cost functionals evaluated on one trajectory: running quadratic costs by
/// the trapezoidal rule on the shared grid plus the terminal term, using the
/// physical coordinates only.
inline std::pair<double, double> evaluate_costs(const Trajectory& tr, const ProblemSpec& s) {
    const int N = tr.grid.N;
    std::vector<double> fF(N + 1), fL(N + 1);
    for (int j = 0; j <= N; ++j) {
        const Vector& x = tr.X[j];
        const Vector& uF = tr.u_F[j];
        const Vector& uL = tr.u_L[j];
        fF[j] = 0.5 * (x.dot(s.Q_F * x) + uL.dot(s.R_FL * uL) + uF.dot(s.R_FF * uF));
        fL[j] = 0.5 * (x.dot(s.Q_L * x) + uL.dot(s.R_LL * uL) + uF.dot(s.R_LF * uF));
    }
    const Vector& xT = tr.X[N];
    const double JF = trapezoid(fF, tr.grid) + 0.5 * xT.dot(s.G_F * xT);
    const double JL = trapezoid(fL, tr.grid) + 0.5 * xT.dot(s.G_L * xT);
    return {JF, JL};
}

namespace detail {

// Fixed-size path chunks with a fixed-order final reduction keep every
// statistic bit-identical across thread counts.
inline constexpr int kChunkSize = 64;
inline constexpr int kMaxLag = 3;

struct ChunkAccum {
    double sJF = 0, sJF2 = 0, sJL = 0, sJL2 = 0;
    std::vector<Vector> sum_e_hat, sum_e_tilde;    // per node
    std::vector<Matrix> sum_ee_hat, sum_ee_tilde;  // per node
    // innovation lag products / squares, per lag and component
    std::array<Vector, kMaxLag> lag_f, lag_l;
    Vector sq_f, sq_l;
    std::array<double, kMaxLag> terms_f{}, terms_l{};
    bool diagnostics = false;

    void init(int N, int nn, int mf, int ml, bool diag) {
        diagnostics = diag;
        if (!diag) return;
        sum_e_hat.assign(N + 1, Vector::Zero(nn));
        sum_e_tilde.assign(N + 1, Vector::Zero(nn));
        sum_ee_hat.assign(N + 1, Matrix::Zero(nn, nn));
        sum_ee_tilde.assign(N + 1, Matrix::Zero(nn, nn));
        for (int l0 = 0; l0 < kMaxLag; ++l0) {
            lag_f[l0] = Vector::Zero(mf);
            lag_l[l0] = Vector::Zero(ml);
        }
        sq_f = Vector::Zero(mf);
        sq_l = Vector::Zero(ml);
    }
};

inline void accumulate_path(ChunkAccum& acc, const Trajectory& tr, const GainSchedule& g,
                            double JF, double JL) {
    acc.sJF += JF;
    acc.sJF2 += JF * JF;
    acc.sJL += JL;
    acc.sJL2 += JL * JL;
    if (!acc.diagnostics) return;
    const int N = tr.grid.N;
    const int n = static_cast<int>(tr.X.front().size());
    const double h = tr.grid.h;
    Vector bold(2 * n);
    std::vector<Vector> innov_f(N), innov_l(N);
    for (int j = 0; j <= N; ++j) {
        bold.head(n) = tr.X[j];
        bold.tail(n) = tr.Y[j];
        const Vector e_hat = bold - tr.x_hat[j];
        const Vector e_tilde = bold - tr.x_tilde[j];
        acc.sum_e_hat[j] += e_hat;
        acc.sum_e_tilde[j] += e_tilde;
        acc.sum_ee_hat[j].noalias() += e_hat * e_hat.transpose();
        acc.sum_ee_tilde[j].noalias() += e_tilde * e_tilde.transpose();
        if (j < N) {
            const Vector dZ2 = tr.Z2[j + 1] - tr.Z2[j];
            innov_f[j] = dZ2 - g.H_F * tr.x_hat[j] * h;
            Vector dZ(tr.Z1[j].size() + dZ2.size());
            dZ << (tr.Z1[j + 1] - tr.Z1[j]), dZ2;
            innov_l[j] = dZ - g.H * tr.x_tilde[j] * h;
        }
    }
    for (int j = 0; j < N; ++j) {
        acc.sq_f += innov_f[j].cwiseProduct(innov_f[j]);
        acc.sq_l += innov_l[j].cwiseProduct(innov_l[j]);
        for (int l0 = 1; l0 <= kMaxLag; ++l0) {
            if (j + l0 >= N) break;
            acc.lag_f[l0 - 1] += innov_f[j].cwiseProduct(innov_f[j + l0]);
            acc.lag_l[l0 - 1] += innov_l[j].cwiseProduct(innov_l[j + l0]);
            acc.terms_f[l0 - 1] += 1.0;
            acc.terms_l[l0 - 1] += 1.0;
        }
    }
}

}  // namespace detail

/// Seeded Monte Carlo over M paths. Path p draws its noise from a generator
/// keyed by (master_seed, p); chunked accumulation with a fixed-order final
/// reduction makes every output independent of thread count and scheduling.
inline CostReport monte_carlo(const ProblemSpec& spec, const AugmentedSystem& aug,
                              const RiccatiBundle& bundle, const GainSchedule& gains,
                              const TimeGrid& grid, int M, std::uint64_t master_seed,
                              const MonteCarloOptions& opts = {}) {
    if (M < 1) throw SimulationError("monte_carlo: need at least one path");
    require_same_grid(grid, gains.grid, "monte_carlo");
    const auto plan = detail::make_plan(spec, aug, bundle, gains, opts.perturbation);
    const int N = grid.N;
    const int nn = aug.nn();
    const int mf = aug.dims.m, ml = aug.dims.l + aug.dims.m;

    const int chunks = (M + detail::kChunkSize - 1) / detail::kChunkSize;
    std::vector<detail::ChunkAccum> accs(chunks);
    std::vector<double> jf(M), jl(M);
    std::vector<std::uint64_t> failed;
    std::mutex failed_mutex;

    auto run_chunk = [&](int c) {
        auto& acc = accs[c];
        acc.init(N, nn, mf, ml, opts.diagnostics);
        const int lo = c * detail::kChunkSize;
        const int hi = std::min(M, lo + detail::kChunkSize);
        for (int p = lo; p < hi; ++p) {
            try {
                Trajectory tr = simulate_path(plan, master_seed, p);
                auto [JF, JL] = evaluate_costs(tr, spec);
                jf[p] = JF;
                jl[p] = JL;
                detail::accumulate_path(acc, tr, gains, JF, JL);
            } catch (const DivergenceError&) {
                std::lock_guard<std::mutex> lock(failed_mutex);
                failed.push_back(p);
            }
        }
    };

    const int threads = std::max(1, opts.threads);
    if (threads == 1 || chunks == 1) {
        for (int c = 0; c < chunks; ++c) run_chunk(c);
    } else {
        std::atomic<int> next{0};
        std::vector<std::thread> pool;
        const int nw = std::min(threads, chunks);
        pool.reserve(nw);
        for (int i = 0; i < nw; ++i)
            pool.emplace_back([&] {
                int c;
                while ((c = next.fetch_add(1)) < chunks) run_chunk(c);
            });
        for (auto& th : pool) th.join();
    }

    if (!failed.empty()) {
        std::string msg = "monte_carlo: " + std::to_string(failed.size()) +
                          " path(s) diverged; failed path seeds:";
        for (std::size_t i = 0; i < std::min<std::size_t>(failed.size(), 16); ++i)
            msg += " (" + std::to_string(master_seed) + "," + std::to_string(failed[i]) + ")";
        throw SimulationError(msg);
    }

    CostReport rep;
    rep.M = M;
    rep.per_path_J_F = std::move(jf);
    rep.per_path_J_L = std::move(jl);

    double sJF = 0, sJF2 = 0, sJL = 0, sJL2 = 0;
    for (int c = 0; c < chunks; ++c) {
        sJF += accs[c].sJF;
        sJF2 += accs[c].sJF2;
        sJL += accs[c].sJL;
        sJL2 += accs[c].sJL2;
    }
    rep.J_F_mean = sJF / M;
    rep.J_L_mean = sJL / M;
    if (M > 1) {
        const double vF = std::max(0.0, (sJF2 - M * rep.J_F_mean * rep.J_F_mean) / (M - 1));
        const double vL = std::max(0.0, (sJL2 - M * rep.J_L_mean * rep.J_L_mean) / (M - 1));
        rep.J_F_se = std::sqrt(vF / M);
        rep.J_L_se = std::sqrt(vL / M);
    }

    if (opts.diagnostics) {
        auto& d = rep.filter_stats;
        d.err_mean_hat.assign(N + 1, Vector::Zero(nn));
        d.err_mean_tilde.assign(N + 1, Vector::Zero(nn));
        std::vector<Matrix> cov_hat(N + 1), cov_tilde(N + 1);
        for (int j = 0; j <= N; ++j) {
            Vector se_h = Vector::Zero(nn), se_t = Vector::Zero(nn);
            Matrix see_h = Matrix::Zero(nn, nn), see_t = Matrix::Zero(nn, nn);
            for (int c = 0; c < chunks; ++c) {
                se_h += accs[c].sum_e_hat[j];
                se_t += accs[c].sum_e_tilde[j];
                see_h += accs[c].sum_ee_hat[j];
                see_t += accs[c].sum_ee_tilde[j];
            }
            d.err_mean_hat[j] = se_h / M;
            d.err_mean_tilde[j] = se_t / M;
            if (M > 1) {
                cov_hat[j] = (see_h - M * (d.err_mean_hat[j] * d.err_mean_hat[j].transpose())) /
                             (M - 1);
                cov_tilde[j] =
                    (see_t - M * (d.err_mean_tilde[j] * d.err_mean_tilde[j].transpose())) /
                    (M - 1);
            } else {
                cov_hat[j] = Matrix::Zero(nn, nn);
                cov_tilde[j] = Matrix::Zero(nn, nn);
            }
        }
        d.err_cov_hat = MatrixPath(grid, std::move(cov_hat));
        d.err_cov_tilde = MatrixPath(grid, std::move(cov_tilde));
        for (int l0 = 1; l0 <= detail::kMaxLag; ++l0) {
            LagAutocorr la;
            la.lag = l0;
            Vector lf = Vector::Zero(mf), ll = Vector::Zero(ml);
            Vector qf = Vector::Zero(mf), ql = Vector::Zero(ml);
            double tf = 0, tl = 0;
            for (int c = 0; c < chunks; ++c) {
                lf += accs[c].lag_f[l0 - 1];
                ll += accs[c].lag_l[l0 - 1];
                qf += accs[c].sq_f;
                ql += accs[c].sq_l;
                tf += accs[c].terms_f[l0 - 1];
                tl += accs[c].terms_l[l0 - 1];
            }
            // Normalize lag sums by the per-term mean square of the increments.
            la.rho_follower = Vector::Zero(mf);
            la.rho_leader = Vector::Zero(ml);
            const double total_sq_terms = static_cast<double>(M) * N;
            for (int c0 = 0; c0 < mf; ++c0)
                la.rho_follower[c0] = qf[c0] > 0 ? (lf[c0] / tf) / (qf[c0] / total_sq_terms) : 0.0;
            for (int c0 = 0; c0 < ml; ++c0)
                la.rho_leader[c0] = ql[c0] > 0 ? (ll[c0] / tl) / (ql[c0] / total_sq_terms) : 0.0;
            la.terms_follower = tf;
            la.terms_leader = tl;
            rep.filter_stats.innovation_autocorr.push_back(std::move(la));
        }
    }
    return rep;
}

}  // namespace stacklqg
