#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"
#include "stacklqg/augment.hpp"
#include "stacklqg/riccati.hpp"

using namespace stacklqg;

TEST_CASE("augmented blocks on the scalar fixture") {
    AugmentedSystem a = augment(fix_scalar());

    // Hand substitution, cross-checked from first principles below.
    Matrix Stilde = (Matrix(2, 2) << -1, 0, 0, 0).finished();
    Matrix Shat = (Matrix(2, 2) << 0, -1, -1, 1).finished();
    Matrix Qbold = (Matrix(2, 2) << 1, 1, 1, 0).finished();
    REQUIRE((a.Stilde - Stilde).norm() == 0.0);
    REQUIRE((a.Shat - Shat).norm() == 0.0);
    REQUIRE((a.Qbold - Qbold).norm() == 0.0);
    REQUIRE(a.Gbold.norm() == 0.0);
    REQUIRE((a.Dbold - (Matrix(2, 1) << 1, 0).finished()).norm() == 0.0);
    REQUIRE((a.H - (Matrix(2, 2) << 1, 0, 1, 0).finished()).norm() == 0.0);

    // First principles: each block from the defining products.
    ProblemSpec s = fix_scalar();
    Matrix SF = s.B_F * s.R_FF.inverse() * s.B_F.transpose();
    Matrix SL = s.B_L * s.R_LL.inverse() * s.B_L.transpose();
    REQUIRE(a.Stilde.topLeftCorner(1, 1) == (-SL));
    REQUIRE(a.Shat.topRightCorner(1, 1) == (-SF));
    REQUIRE(a.Shat.bottomRightCorner(1, 1) ==
            s.B_F * s.R_FF.inverse() * s.R_LF * s.R_FF.inverse() * s.B_F.transpose());
}

TEST_CASE("augment structural properties") {
    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 10; ++trial) {
        ProblemSpec s;
        s.dims = {2, 2, 1, 1, 2, 2};
        s.A = test_helpers::random_matrix(rng, 2, 2);
        s.B_F = test_helpers::random_matrix(rng, 2, 2);
        s.B_L = test_helpers::random_matrix(rng, 2, 1);
        s.D = test_helpers::random_matrix(rng, 2, 2);
        s.H1 = test_helpers::random_matrix(rng, 1, 2);
        s.H2 = test_helpers::random_matrix(rng, 2, 2);
        s.Q_F = test_helpers::random_spd(rng, 2);
        s.Q_L = test_helpers::random_spd(rng, 2);
        s.R_FF = test_helpers::random_spd(rng, 2);
        s.R_FL = Matrix::Zero(1, 1);
        s.R_LL = test_helpers::random_spd(rng, 1);
        s.R_LF = test_helpers::random_spd(rng, 2);
        s.G_F = test_helpers::random_spd(rng, 2);
        s.G_L = test_helpers::random_spd(rng, 2);
        s.T = 1.0;
        s.x0_mean = test_helpers::random_vector(rng, 2);
        s.x0_cov = test_helpers::random_spd(rng, 2);
        AugmentedSystem a = augment(s);

        REQUIRE(asymmetry(a.Qbold) == 0.0);
        REQUIRE(asymmetry(a.Gbold) == 0.0);
        REQUIRE(asymmetry(a.Stilde + a.Shat) < 1e-12);
        REQUIRE(a.Shat.topLeftCorner(2, 2).norm() == 0.0);
        // zero columns over the Y coordinates, bit exact
        REQUIRE(a.H.rightCols(2).norm() == 0.0);
        REQUIRE(a.H_L.rightCols(2).norm() == 0.0);
        REQUIRE(a.H_F.rightCols(2).norm() == 0.0);
        // Xi0 = [[S0,S0],[S0,S0]] is PSD whenever Sigma0 is
        REQUIRE(min_eigenvalue(a.Xi0) > -1e-10 * (1.0 + max_eigenvalue(a.Xi0)));
        REQUIRE((a.gamma_mean.head(2) - s.x0_mean).norm() == 0.0);
        REQUIRE(a.gamma_mean.tail(2).norm() == 0.0);
    }
}

TEST_CASE("B_L = 0 kills Stilde") {
    ProblemSpec s = fix_scalar();
    s.B_L.setZero();
    AugmentedSystem a = augment(s);
    REQUIRE(a.Stilde.norm() == 0.0);
}

TEST_CASE("ill-conditioned R_FF raises an inversion error") {
    ProblemSpec s = fix_scalar();
    s.dims.k = 2;
    s.B_F = Matrix::Ones(1, 2);
    s.R_FF = (Matrix(2, 2) << 1.0, 1.0, 1.0, 1.0 + 1e-14).finished();
    s.R_LF = Matrix::Identity(2, 2);
    REQUIRE_THROWS_AS(augment(s), InversionError);
}

TEST_CASE("check system blocks") {
    AugmentedSystem a = augment(fix_scalar());
    TimeGrid grid(1.0, 10);

    auto const_path = [&](const Matrix& m) {
        return MatrixPath(grid, std::vector<Matrix>(grid.N + 1, m));
    };

    SECTION("Sigma = 0 kills the observation couplings") {
        MatrixPath Pdag = const_path(Matrix::Ones(2, 2));
        MatrixPath Sigma = const_path(Matrix::Zero(2, 2));
        CheckSystemPath cs = build_check_system(a, Pdag, Sigma);
        for (int j = 0; j <= grid.N; ++j) {
            REQUIRE(cs.Gdag.at(j).norm() == 0.0);
            REQUIRE(cs.Gddag.at(j).norm() == 0.0);
            REQUIRE((cs.F.at(j).bottomRightCorner(2, 2) - a.Abold).norm() == 0.0);
        }
    }
    SECTION("Pdag = 0 gives the uncoupled upper blocks") {
        MatrixPath Pdag = const_path(Matrix::Zero(2, 2));
        MatrixPath Sigma = const_path(Matrix::Identity(2, 2));
        CheckSystemPath cs = build_check_system(a, Pdag, Sigma);
        REQUIRE((cs.F.at(0).topLeftCorner(2, 2) - a.Abold).norm() == 0.0);
        REQUIRE(cs.F.at(0).topRightCorner(2, 2).norm() == 0.0);
        REQUIRE(cs.F.at(0).bottomLeftCorner(2, 2).norm() == 0.0);
    }
    SECTION("terminal node with Pdag(T) = Gbold = 0") {
        MatrixPath Pdag = const_path(a.Gbold);  // zero for this fixture
        MatrixPath Sigma = const_path(Matrix::Identity(2, 2));
        CheckSystemPath cs = build_check_system(a, Pdag, Sigma);
        REQUIRE((cs.F.at(grid.N).topLeftCorner(2, 2) - a.Abold).norm() == 0.0);
    }
    SECTION("constant pieces") {
        MatrixPath Pdag = const_path(Matrix::Zero(2, 2));
        MatrixPath Sigma = const_path(Matrix::Zero(2, 2));
        CheckSystemPath cs = build_check_system(a, Pdag, Sigma);
        Matrix Dcheck(4, 1);
        Dcheck << 1, 0, 1, 0;
        REQUIRE((cs.Dcheck - Dcheck).norm() == 0.0);
        Matrix Hcheck(1, 4);
        Hcheck << 1, 0, 0, 0;
        REQUIRE((cs.Hcheck_F - Hcheck).norm() == 0.0);
    }
    SECTION("grid mismatch is rejected") {
        TimeGrid other(1.0, 20);
        MatrixPath Pdag = const_path(Matrix::Zero(2, 2));
        MatrixPath Sigma(other, std::vector<Matrix>(other.N + 1, Matrix::Zero(2, 2)));
        REQUIRE_THROWS_AS(build_check_system(a, Pdag, Sigma), GridError);
    }
}
