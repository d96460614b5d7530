#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"
#include "stacklqg/scenario.hpp"

using namespace stacklqg;

namespace {

nlohmann::json fix_scalar_doc() {
    return emit_scenario(fix_scalar());
}

}  // namespace

TEST_CASE("scenario round trip of the scalar fixture") {
    auto doc = fix_scalar_doc();
    ProblemSpec s = load_scenario(doc);
    REQUIRE(s.dims.n == 1);
    REQUIRE(s.dims.k == 1);
    REQUIRE(s.dims.d == 1);
    REQUIRE(s.dims.l == 1);
    REQUIRE(s.dims.m == 1);
    REQUIRE(s.dims.w == 1);
    REQUIRE(s.A(0, 0) == 0.0);
    REQUIRE(s.B_F(0, 0) == 1.0);
    REQUIRE(s.R_LF(0, 0) == 1.0);
    REQUIRE(s.R_FL(0, 0) == 0.0);
    REQUIRE(s.T == 1.0);
    REQUIRE(s.x0_cov(0, 0) == 1.0);
}

TEST_CASE("omitted R_FL defaults to the zero matrix") {
    auto doc = fix_scalar_doc();
    doc["weights"].erase("R_FL");
    ProblemSpec s = load_scenario(doc);
    REQUIRE(s.R_FL.rows() == 1);
    REQUIRE(s.R_FL.cols() == 1);
    REQUIRE(s.R_FL(0, 0) == 0.0);
}

TEST_CASE("shape contradiction raises a dimension error naming both shapes") {
    auto doc = emit_scenario(fix_debt());  // consistent n = 2 document
    doc["matrices"]["H2"] = {{1.0, 0.0, 0.0}};  // 1x3 against n = 2
    try {
        load_scenario(doc);
        FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        REQUIRE(msg.find("H2") != std::string::npos);
        REQUIRE(msg.find("1x2") != std::string::npos);  // expected shape
        REQUIRE(msg.find("1x3") != std::string::npos);  // offending shape
    }
}

TEST_CASE("malformed documents raise parse errors naming the field") {
    auto doc = fix_scalar_doc();
    doc["weights"].erase("Q_L");
    try {
        load_scenario(doc);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        REQUIRE(std::string(e.what()).find("Q_L") != std::string::npos);
    }
}

TEST_CASE("round trip is bit-exact on random specs") {
    std::mt19937_64 rng(2024);
    for (int trial = 0; trial < 10; ++trial) {
        ProblemSpec s;
        s.dims = {2, 1, 2, 1, 2, 2};
        s.A = test_helpers::random_matrix(rng, 2, 2);
        s.B_F = test_helpers::random_matrix(rng, 2, 1);
        s.B_L = test_helpers::random_matrix(rng, 2, 2);
        s.D = test_helpers::random_matrix(rng, 2, 2);
        s.H1 = test_helpers::random_matrix(rng, 1, 2);
        s.H2 = test_helpers::random_matrix(rng, 2, 2);
        s.Q_F = test_helpers::random_spd(rng, 2);
        s.Q_L = test_helpers::random_spd(rng, 2);
        s.R_FF = test_helpers::random_spd(rng, 1);
        s.R_FL = test_helpers::random_spd(rng, 2);
        s.R_LL = test_helpers::random_spd(rng, 2);
        s.R_LF = test_helpers::random_spd(rng, 1);
        s.G_F = test_helpers::random_spd(rng, 2);
        s.G_L = test_helpers::random_spd(rng, 2);
        s.T = std::abs(test_helpers::random_vector(rng, 1)[0]) + 0.1;
        s.x0_mean = test_helpers::random_vector(rng, 2);
        s.x0_cov = test_helpers::random_spd(rng, 2);
        ProblemSpec r = load_scenario(emit_scenario(s));
        REQUIRE(r.A == s.A);
        REQUIRE(r.Q_F == s.Q_F);
        REQUIRE(r.R_FL == s.R_FL);
        REQUIRE(r.x0_cov == s.x0_cov);
        REQUIRE(r.T == s.T);
        REQUIRE(r.x0_mean == s.x0_mean);
    }
}

TEST_CASE("validate_assumptions") {
    SECTION("the debt example with unit parameters passes") {
        ProblemSpec s = build_example_debt(0.05, 1, 1, 1, 1, 1, 5, 0, 1);
        auto rep = validate_assumptions(s);
        REQUIRE(rep.passed);
        REQUIRE(rep.failures.empty());
    }
    SECTION("R_FF = 0 fails positive definiteness") {
        ProblemSpec s = fix_scalar();
        s.R_FF.setZero();
        auto rep = validate_assumptions(s);
        REQUIRE_FALSE(rep.passed);
        bool found = false;
        for (const auto& f : rep.failures)
            if (f.message.find("R_FF not positive definite") != std::string::npos) found = true;
        REQUIRE(found);
    }
    SECTION("indefinite Q_L fails PSD") {
        ProblemSpec s = fix_scalar();
        s.dims.n = 2;
        s.A = Matrix::Zero(2, 2);
        s.B_F = Matrix::Ones(2, 1);
        s.B_L = Matrix::Ones(2, 1);
        s.D = Matrix::Ones(2, 1);
        s.H1 = Matrix::Ones(1, 2);
        s.H2 = Matrix::Ones(1, 2);
        s.Q_F = Matrix::Identity(2, 2);
        s.Q_L = Vector{{1.0, -0.5}}.asDiagonal();
        s.G_F = Matrix::Zero(2, 2);
        s.G_L = Matrix::Zero(2, 2);
        s.x0_mean = Vector::Zero(2);
        s.x0_cov = Matrix::Identity(2, 2);
        auto rep = validate_assumptions(s);
        REQUIRE_FALSE(rep.passed);
        bool found = false;
        for (const auto& f : rep.failures)
            if (f.message.find("Q_L not PSD") != std::string::npos) {
                found = true;
                REQUIRE(f.value == Catch::Approx(-0.5));
            }
        REQUIRE(found);
    }
    SECTION("asymmetric weight is reported") {
        ProblemSpec s = build_example_debt(0.05, 1, 1, 1, 1, 1, 5, 0, 1);
        s.Q_F(0, 1) = 0.3;
        auto rep = validate_assumptions(s);
        REQUIRE_FALSE(rep.passed);
    }
}

TEST_CASE("debt example builder") {
    ProblemSpec s = build_example_debt(0.07, 0.8, 1.2, 2.0, 1.5, 0.5, 4.0, 1.0, 0.25);
    REQUIRE(s.B_F(0, 0) == -1.0);
    REQUIRE(s.B_F(1, 0) == 0.0);
    REQUIRE(s.R_LF(0, 0) == 1.5);
    REQUIRE(s.H1(0, 0) == 0.8);
    REQUIRE(s.H2(0, 0) == 1.2);
    REQUIRE(s.Q_F(0, 0) == 0.5);
    REQUIRE(s.Q_L(0, 0) == 2.0);
    REQUIRE(s.x0_cov(0, 0) == 0.25);

    SECTION("r = 0 gives the pure-offset dynamics") {
        ProblemSpec z = build_example_debt(0.0, 1, 1, 1, 1, 1, 1, 0, 0);
        Matrix expect = (Matrix(2, 2) << 0, 1, 0, 0).finished();
        REQUIRE(z.A == expect);
    }
    SECTION("built spec passes validation") {
        REQUIRE(validate_assumptions(s).passed);
    }
    SECTION("builders reject bad horizon and variance") {
        REQUIRE_THROWS_AS(build_example_debt(0, 1, 1, 1, 1, 1, -1, 0, 0), ParameterError);
        REQUIRE_THROWS_AS(build_example_debt(0, 1, 1, 1, 1, 1, 1, 0, -0.5), ParameterError);
    }
    SECTION("nonpositive weights flow to validation, not construction") {
        ProblemSpec bad = build_example_debt(0.05, 1, 1, -1.0, 1, 1, 5, 0, 1);
        REQUIRE_FALSE(validate_assumptions(bad).passed);
    }
}

namespace {

ProblemSpec scalar_servo(double theta, const Matrix& G11, const Matrix& G12, const Matrix& G21,
                         const Matrix& G22) {
    Matrix one = Matrix::Constant(1, 1, 1.0);
    Matrix a1 = Matrix::Constant(1, 1, -0.5);
    Matrix a2 = Matrix::Constant(1, 1, -0.4);
    Matrix L = Matrix::Constant(1, 1, 0.0);
    Matrix d1 = Matrix::Constant(1, 1, 0.2);
    Matrix d2 = Matrix::Constant(1, 1, 0.3);
    Matrix h1 = (Matrix(1, 2) << 1.0, 0.0).finished();
    Matrix h2 = (Matrix(1, 2) << 0.0, 1.0).finished();
    Vector mean = Vector::Zero(3);
    Matrix cov = Matrix::Identity(3, 3);
    return build_example_servo(a1, a2, L, one, one, d1, d2, h1, h2, G11, G12, G21, G22, theta,
                               2.0, mean, cov);
}

}  // namespace

TEST_CASE("servo example builder") {
    Matrix zero = Matrix::Zero(1, 1);
    SECTION("zero follower tracking blocks give Q_F = diag(0, I, 0)") {
        ProblemSpec s = scalar_servo(0.5, zero, zero, zero, zero);
        Matrix expect = Matrix::Zero(3, 3);
        expect(1, 1) = 1.0;
        REQUIRE((s.Q_F - expect).norm() == 0.0);
    }
    SECTION("theta = 1/2 splits the leader weights evenly") {
        ProblemSpec s = scalar_servo(0.5, zero, zero, zero, zero);
        REQUIRE(s.R_LF(0, 0) == 0.5);
        REQUIRE(s.R_LL(0, 0) == 0.5);
    }
    SECTION("theta outside (0,1) is rejected") {
        REQUIRE_THROWS_AS(scalar_servo(1.0, zero, zero, zero, zero), ParameterError);
        REQUIRE_THROWS_AS(scalar_servo(0.0, zero, zero, zero, zero), ParameterError);
    }
    SECTION("Q_F is PSD for random tracking blocks") {
        std::mt19937_64 rng(99);
        for (int trial = 0; trial < 20; ++trial) {
            Matrix g11 = test_helpers::random_matrix(rng, 1, 1, 2.0);
            Matrix g12 = test_helpers::random_matrix(rng, 1, 1, 2.0);
            Matrix g21 = test_helpers::random_matrix(rng, 1, 1, 2.0);
            Matrix g22 = test_helpers::random_matrix(rng, 1, 1, 2.0);
            ProblemSpec s = scalar_servo(0.3, g11, g12, g21, g22);
            REQUIRE(min_eigenvalue(s.Q_F) > -1e-12);
            REQUIRE(min_eigenvalue(s.Q_L) > -1e-12);
            REQUIRE(validate_assumptions(s).passed);
        }
    }
    SECTION("matches the displayed quadratic blocks") {
        Matrix g11 = Matrix::Constant(1, 1, 0.7);
        Matrix g12 = Matrix::Constant(1, 1, -0.2);
        Matrix g21 = Matrix::Constant(1, 1, 1.3);
        Matrix g22 = Matrix::Constant(1, 1, 0.4);
        ProblemSpec s = scalar_servo(0.25, g11, g12, g21, g22);
        Matrix QF(3, 3);
        QF << 1.3 * 1.3, -1.3, 1.3 * 0.4, -1.3, 1.0, -0.4, 0.4 * 1.3, -0.4, 0.4 * 0.4;
        REQUIRE((s.Q_F - QF).norm() < 1e-14);
        Matrix QL(3, 3);
        QL << 1.0, 0.2, -0.7, 0.2, 0.2 * 0.2, -0.2 * 0.7, -0.7, -0.7 * 0.2, 0.7 * 0.7;
        REQUIRE((s.Q_L - QL).norm() < 1e-14);
    }
}

TEST_CASE("fixtures are well formed") {
    for (const ProblemSpec& s : {fix_scalar(), fix_det(), fix_debt()}) {
        REQUIRE_NOTHROW(check_shapes(s));
        REQUIRE(validate_assumptions(s).passed);
    }
    REQUIRE(fix_det().D.norm() == 0.0);
    REQUIRE(fix_det().x0_cov.norm() == 0.0);
    REQUIRE(fix_debt().T == 5.0);
}
