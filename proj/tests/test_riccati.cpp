#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"
#include "stacklqg/riccati.hpp"

using namespace stacklqg;

namespace {

// Scalar filter Riccati closed form for the scalar fixture: sigma' = 1 - 2 sigma^2
// from sigma(0) = 1, i.e. sigma(t) = coth(sqrt(2)(t + c))/sqrt(2) with
// coth(sqrt(2) c) = sqrt(2).
double sigma_closed_form(double t) {
    const double c = std::atanh(1.0 / std::sqrt(2.0)) / std::sqrt(2.0);
    return 1.0 / (std::sqrt(2.0) * std::tanh(std::sqrt(2.0) * (t + c)));
}

}  // namespace

TEST_CASE("P is identically zero when all weights vanish") {
    ProblemSpec s = fix_scalar();
    s.Q_F.setZero();
    s.Q_L.setZero();
    AugmentedSystem a = augment(s);
    TimeGrid grid(1.0, 100);
    MatrixPath P = solve_P(a, grid);
    for (int j = 0; j <= grid.N; ++j) REQUIRE(P.at(j).norm() == 0.0);
}

TEST_CASE("scalar reduction of solve_P is the Bernoulli closed form") {
    AugmentedSystem a;
    a.dims = {1, 1, 1, 1, 1, 1};  // only the flow matrices matter here
    a.Abold = Matrix::Zero(1, 1);
    a.Stilde = Matrix::Constant(1, 1, -1.0);
    a.Shat = Matrix::Zero(1, 1);
    a.Qbold = Matrix::Zero(1, 1);
    a.Gbold = Matrix::Constant(1, 1, 1.0);
    TimeGrid grid(1.0, 1000);
    MatrixPath P = solve_P(a, grid);
    REQUIRE(P.at(0)(0, 0) == Catch::Approx(0.5).margin(1e-8));
    REQUIRE(P.at(grid.N) == a.Gbold);
}

TEST_CASE("finite escape of the P flow is reported as divergence") {
    AugmentedSystem a;
    a.dims = {1, 1, 1, 1, 1, 1};
    a.Abold = Matrix::Zero(1, 1);
    a.Stilde = Matrix::Constant(1, 1, -1.0);
    a.Shat = Matrix::Zero(1, 1);
    a.Qbold = Matrix::Zero(1, 1);
    a.Gbold = Matrix::Constant(1, 1, -1.0);  // p' = p^2 backward from -1 escapes at T-1
    TimeGrid grid(5.0, 500);
    REQUIRE_THROWS_AS(solve_P(a, grid), DivergenceError);
}

TEST_CASE("solve_Sigma special cases") {
    SECTION("no noise, zero initial covariance stays zero") {
        AugmentedSystem a = augment(fix_det());
        TimeGrid grid(1.0, 100);
        MatrixPath S = solve_Sigma(a, grid);
        for (int j = 0; j <= grid.N; ++j) REQUIRE(S.at(j).norm() == 0.0);
    }
    SECTION("no observations: pure Lyapunov growth") {
        ProblemSpec s = fix_scalar();
        s.H1.setZero();
        s.H2.setZero();
        AugmentedSystem a = augment(s);
        TimeGrid grid(1.0, 100);
        MatrixPath S = solve_Sigma(a, grid);
        for (int j = 0; j <= grid.N; j += 10) {
            REQUIRE(S.at(j)(0, 0) == Catch::Approx(1.0 + grid.t(j)).epsilon(1e-12));
            REQUIRE(S.at(j)(1, 1) == 0.0);
        }
    }
    SECTION("scalar fixture matches the tanh-family closed form") {
        AugmentedSystem a = augment(fix_scalar());
        TimeGrid grid(1.0, 2000);
        MatrixPath S = solve_Sigma(a, grid);
        for (int j = 0; j <= grid.N; j += 200) {
            REQUIRE(S.at(j)(0, 0) == Catch::Approx(sigma_closed_form(grid.t(j))).margin(1e-6));
            REQUIRE(std::abs(S.at(j)(0, 1)) < 1e-14);
            REQUIRE(std::abs(S.at(j)(1, 1)) < 1e-14);
        }
    }
}

TEST_CASE("leader pair converges on the confirming sweep when the coupling vanishes") {
    SECTION("Xi0 = 0 and D = 0") {
        AugmentedSystem a = augment(fix_det());
        TimeGrid grid(1.0, 1000);
        MatrixPath P = solve_P(a, grid);
        MatrixPath Sigma = solve_Sigma(a, grid);
        auto [Pdag, Xi, rep] = solve_leader_pair(a, P, Sigma, grid);
        REQUIRE(rep.converged);
        REQUIRE(rep.iterations == 2);
        for (int j = 0; j <= grid.N; j += 20) REQUIRE(Xi.at(j).norm() == 0.0);
        // Pdag solves its decoupled Riccati; residual check
        auto rhs = make_rhs_Pdag(
            a, [&](double t) { return (P.eval(t) - P.eval(t)).eval(); },
            [&](double) { return Matrix::Zero(2, 2).eval(); });
        REQUIRE(riccati_residual(Pdag, rhs, grid) < 1e-5);
    }
    SECTION("H2 = 0 decouples as well") {
        ProblemSpec s = fix_scalar();
        s.H2.setZero();
        AugmentedSystem a = augment(s);
        TimeGrid grid(1.0, 200);
        MatrixPath P = solve_P(a, grid);
        MatrixPath Sigma = solve_Sigma(a, grid);
        auto [Pdag, Xi, rep] = solve_leader_pair(a, P, Sigma, grid);
        REQUIRE(rep.converged);
        REQUIRE(rep.iterations == 2);
    }
}

TEST_CASE("coupled solve on the scalar fixture") {
    AugmentedSystem a = augment(fix_scalar());
    TimeGrid grid(1.0, 2000);
    RiccatiBundle b = solve_riccati_bundle(a, grid);

    SECTION("fixed point report") {
        REQUIRE(b.fp_report.converged);
        REQUIRE(b.fp_report.final_delta <= 1e-8);
        REQUIRE(b.fp_report.iterations <= 50);
        // deltas decrease monotonically after the first few sweeps
        for (std::size_t i = 3; i + 1 < b.fp_report.deltas.size(); ++i)
            REQUIRE(b.fp_report.deltas[i + 1] < b.fp_report.deltas[i]);
    }
    SECTION("terminal and initial data are exact") {
        REQUIRE(b.P.at(grid.N) == a.Gbold);
        REQUIRE(b.Pdag.at(grid.N) == a.Gbold);
        REQUIRE(b.Sigma.at(0) == a.Sigma0);
        REQUIRE(b.Xi.at(0) == a.Xi0);
    }
    SECTION("symmetry and positivity") {
        for (int j = 0; j <= grid.N; j += 100) {
            REQUIRE(asymmetry(b.P.at(j)) <= 1e-10);
            REQUIRE(asymmetry(b.Sigma.at(j)) <= 1e-10);
            REQUIRE(asymmetry(b.Xi.at(j)) <= 1e-10);
            REQUIRE(min_eigenvalue(b.Xi.at(j)) >= -1e-8 * (1.0 + b.Xi.at(j).trace()));
            REQUIRE(min_eigenvalue(b.Xi11.at(j)) >= -1e-8 * (1.0 + b.Xi11.at(j).trace()));
            REQUIRE(min_eigenvalue(b.Sigma.at(j)) >= -1e-8 * (1.0 + b.Sigma.at(j).trace()));
        }
    }
    SECTION("Pddag = P - Pdag bit-exactly") {
        for (int j = 0; j <= grid.N; j += 100)
            REQUIRE(b.Pddag.at(j) == (b.P.at(j) - b.Pdag.at(j)).eval());
    }
    SECTION("all four ODE residuals hold simultaneously") {
        REQUIRE(riccati_residual(b.P, make_rhs_P(a), grid) < 1e-6);
        REQUIRE(riccati_residual(b.Sigma, make_rhs_Sigma(a), grid) < 1e-6);
        auto rhs_pd = make_rhs_Pdag(a, [&](double t) { return b.Pddag.eval(t); },
                                    [&](double t) { return b.Xi11.eval(t); });
        REQUIRE(riccati_residual(b.Pdag, rhs_pd, grid) < 1e-5);
        auto rhs_xi = make_rhs_Xi(a, [&](double t) { return b.Pdag.eval(t); },
                                  [&](double t) { return b.Sigma.eval(t); });
        REQUIRE(riccati_residual(b.Xi, rhs_xi, grid) < 1e-5);
    }
    SECTION("grid refinement stability") {
        TimeGrid coarse(1.0, 1000);
        RiccatiBundle c = solve_riccati_bundle(a, coarse);
        const double p0 = (c.P.at(0) - b.P.at(0)).norm() / b.P.at(0).norm();
        const double pd0 = (c.Pdag.at(0) - b.Pdag.at(0)).norm() / b.Pdag.at(0).norm();
        const double sT = (c.Sigma.at(coarse.N) - b.Sigma.at(grid.N)).norm() /
                          b.Sigma.at(grid.N).norm();
        const double xT = (c.Xi.at(coarse.N) - b.Xi.at(grid.N)).norm() / b.Xi.at(grid.N).norm();
        REQUIRE(p0 <= 1e-4);
        REQUIRE(pd0 <= 1e-4);
        REQUIRE(sT <= 1e-4);
        REQUIRE(xT <= 1e-4);
    }
}

TEST_CASE("riccati_residual") {
    TimeGrid grid(1.0, 100);
    SECTION("exact constant solution has zero residual") {
        Matrix c = Matrix::Constant(2, 2, 3.0);
        MatrixPath path(grid, std::vector<Matrix>(grid.N + 1, c));
        OdeRhs rhs = [](double, const Matrix& m) {
            return Matrix::Zero(m.rows(), m.cols()).eval();
        };
        REQUIRE(riccati_residual(path, rhs, grid) == 0.0);
    }
    SECTION("sampled closed form has O(h^2) residual") {
        auto residual_at = [](int N) {
            TimeGrid g(1.0, N);
            std::vector<Matrix> v(g.N + 1);
            for (int j = 0; j <= g.N; ++j)
                v[j] = Matrix::Constant(1, 1, 1.0 / (1.0 + (g.T - g.t(j))));
            MatrixPath path(g, std::move(v));
            OdeRhs rhs = [](double, const Matrix& p) { return (p * p).eval(); };
            return riccati_residual(path, rhs, g);
        };
        const double r1 = residual_at(100);
        const double r2 = residual_at(200);
        REQUIRE(r1 / r2 > 3.0);
        REQUIRE(r1 / r2 < 5.0);
    }
    SECTION("solve_P output on the scalar fixture stays under 1e-5 at N=2000") {
        AugmentedSystem a = augment(fix_scalar());
        TimeGrid g(1.0, 2000);
        MatrixPath P = solve_P(a, g);
        REQUIRE(riccati_residual(P, make_rhs_P(a), g) <= 1e-5);
    }
}

TEST_CASE("non-convergence carries the final delta") {
    AugmentedSystem a = augment(fix_scalar());
    TimeGrid grid(1.0, 100);
    MatrixPath P = solve_P(a, grid);
    MatrixPath Sigma = solve_Sigma(a, grid);
    FixedPointConfig cfg;
    cfg.max_iter = 1;  // force failure
    cfg.throw_on_failure = true;
    try {
        solve_leader_pair(a, P, Sigma, grid, cfg);
        FAIL("expected FixedPointError");
    } catch (const FixedPointError& e) {
        REQUIRE(e.iterations == 1);
        REQUIRE(e.final_delta > 1e-8);
    }
    cfg.throw_on_failure = false;
    auto [pd, xi, rep] = solve_leader_pair(a, P, Sigma, grid, cfg);
    REQUIRE_FALSE(rep.converged);
}
