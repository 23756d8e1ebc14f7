#include <catch2/catch_amalgamated.hpp>

#include "sep/regression.hpp"
#include "sep/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

using namespace sep;

namespace {

Eigen::MatrixXd random_states(int m, int dim, std::uint64_t seed) {
    RngStream rs(seed, 0);
    Eigen::MatrixXd s(m, dim);
    for (int r = 0; r < m; ++r) {
        for (int j = 0; j < dim; ++j) s(r, j) = rs.normal() * (1.0 + j) + 0.5 * j;
    }
    return s;
}

double rel_mean_gap(const Eigen::VectorXd& fitted, const Eigen::VectorXd& targets) {
    const double scale = std::max(std::fabs(targets.mean()), targets.cwiseAbs().maxCoeff());
    return std::fabs(fitted.mean() - targets.mean()) / scale;
}

}  // namespace

TEST_CASE("basis sizes and monomial order", "[regression]") {
    CHECK(BasisSpec{3, 2, 0.0}.size() == 10);
    CHECK(BasisSpec{1, 0, 0.0}.size() == 1);
    CHECK(BasisSpec{1, 3, 0.0}.size() == 4);
    CHECK(monomial_exponents(3, 2).size() == 10);

    const auto e = monomial_exponents(2, 2);
    const std::vector<Exponents> expected{{0, 0}, {1, 0}, {0, 1}, {2, 0}, {1, 1}, {0, 2}};
    CHECK(e == expected);

    Eigen::MatrixXd states(4, 2);
    states << 1, 5, 2, 7, 3, 2, 6, 2;
    const auto dm = design_matrix({2, 2, 0.0}, states);
    REQUIRE(dm.matrix.cols() == 6);
    for (Eigen::Index r = 0; r < states.rows(); ++r) {
        const double x = (states(r, 0) - dm.standardizer.mean(0)) / dm.standardizer.scale(0);
        const double y = (states(r, 1) - dm.standardizer.mean(1)) / dm.standardizer.scale(1);
        CHECK(dm.matrix(r, 0) == 1.0);
        CHECK(dm.matrix(r, 1) == Catch::Approx(x));
        CHECK(dm.matrix(r, 2) == Catch::Approx(y));
        CHECK(dm.matrix(r, 3) == Catch::Approx(x * x));
        CHECK(dm.matrix(r, 4) == Catch::Approx(x * y));
        CHECK(dm.matrix(r, 5) == Catch::Approx(y * y));
    }

    const auto single = design_matrix({1, 0, 0.0}, random_states(7, 1, 1));
    CHECK(single.matrix.cols() == 1);
    CHECK((single.matrix.array() == 1.0).all());
}

TEST_CASE("standardization", "[regression]") {
    const auto states = random_states(1000, 3, 5);
    const auto st = fit_standardizer(states);
    const Eigen::MatrixXd z =
        (states.rowwise() - st.mean.transpose()).array().rowwise() / st.scale.transpose().array();
    for (int j = 0; j < 3; ++j) {
        CHECK(std::fabs(z.col(j).mean()) < 1e-12);
        CHECK(std::sqrt(z.col(j).squaredNorm() / 1000.0) == Catch::Approx(1.0).epsilon(1e-12));
    }
    Eigen::MatrixXd flat = Eigen::MatrixXd::Constant(50, 2, 3.25);
    flat.col(1).setLinSpaced(50, 0.0, 1.0);
    const auto sf = fit_standardizer(flat);
    CHECK(sf.scale(0) == 1.0);
    CHECK(sf.scale(1) != 1.0);
}

TEST_CASE("too few samples", "[regression]") {
    const auto states = random_states(9, 3, 2);
    try {
        (void)cond_expectation({3, 2, 1e-8}, states, Eigen::VectorXd::Ones(9));
        FAIL("expected INSUFFICIENT_SAMPLES");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::insufficient_samples);
    }
    CHECK_THROWS_AS(cond_expectation({3, 2, 1e-8}, random_states(10, 2, 2), Eigen::VectorXd::Ones(10)),
                    Error);
}

TEST_CASE("exact linear recovery without ridge", "[regression]") {
    const auto states = random_states(500, 1, 3);
    const Eigen::VectorXd targets = (2.0 + 3.0 * states.col(0).array()).matrix();
    const BasisSpec spec{1, 1, 0.0};
    const auto fit = regress(spec, states, targets);
    const double slope = fit.coefficients(1) / fit.standardizer.scale(0);
    const double intercept = fit.coefficients(0) - slope * fit.standardizer.mean(0);
    CHECK(std::fabs(slope - 3.0) <= 1e-10 * 3.0);
    CHECK(std::fabs(intercept - 2.0) <= 1e-10 * 2.0);
    CHECK(fit.sample_count == 500);
    CHECK(fit.condition_estimate >= 1.0);
}

TEST_CASE("constant targets", "[regression]") {
    const auto states = random_states(200, 3, 4);
    const Eigen::VectorXd targets = Eigen::VectorXd::Constant(200, -0.75);
    for (double ridge : {0.0, 1e-8}) {
        const auto fit = regress({3, 2, ridge}, states, targets);
        CHECK(fit.coefficients(0) == Catch::Approx(-0.75).epsilon(1e-13));
        for (Eigen::Index j = 1; j < fit.coefficients.size(); ++j) {
            CHECK(std::fabs(fit.coefficients(j)) < 1e-12);
        }
    }
}

TEST_CASE("quadratic coefficient within standard errors", "[regression][statistical]") {
    const int m = 10000;
    const double noise = 0.01;
    const auto states = random_states(m, 3, 6);
    RngStream rs(6, 1);
    Eigen::VectorXd targets(m);
    for (int r = 0; r < m; ++r) targets(r) = states(r, 0) * states(r, 0) + noise * rs.normal();

    const BasisSpec spec{3, 2, 0.0};
    const auto dm = design_matrix(spec, states);
    const auto fit = fit_least_squares(dm.matrix, targets, 0.0);
    // Column 4 is z0^2 with z0 = (x - mean) / scale, so its coefficient is scale^2 times that of x^2.
    const double s2 = dm.standardizer.scale(0) * dm.standardizer.scale(0);
    const double estimate = fit.coefficients(4) / s2;
    const Eigen::MatrixXd cov = (dm.matrix.transpose() * dm.matrix).inverse() * noise * noise;
    const double se = std::sqrt(cov(4, 4)) / s2;
    CHECK(std::fabs(estimate - 1.0) <= 3.0 * se);
}

TEST_CASE("pure noise targets", "[regression][statistical]") {
    const int m = 10000;
    const auto states = random_states(m, 3, 7);
    RngStream rs(7, 1);
    Eigen::VectorXd targets(m);
    for (int r = 0; r < m; ++r) targets(r) = 4.0 + rs.normal();
    const BasisSpec spec{3, 2, 1e-8};
    const Eigen::VectorXd fitted = cond_expectation(spec, states, targets);
    const double mean = targets.mean();
    const double sd = std::sqrt((targets.array() - mean).square().sum() / (m - 1.0));

    const auto dm = design_matrix(spec, states);
    const Eigen::MatrixXd gram_inv = (dm.matrix.transpose() * dm.matrix).inverse();
    double worst = 0.0;
    for (int r = 0; r < m; ++r) {
        const double leverage = dm.matrix.row(r) * gram_inv * dm.matrix.row(r).transpose();
        worst = std::max(worst, std::fabs(fitted(r) - mean) / (sd * std::sqrt(leverage)));
    }
    CHECK(worst <= 5.0);
}

TEST_CASE("degenerate and in-span targets", "[regression]") {
    Eigen::MatrixXd same = Eigen::MatrixXd::Constant(100, 3, 0.4);
    RngStream rs(8, 0);
    Eigen::VectorXd noise(100);
    for (auto& v : noise) v = rs.normal();
    const Eigen::VectorXd fitted = cond_expectation({3, 2, 1e-8}, same, noise);
    for (Eigen::Index r = 0; r < 100; ++r) CHECK(fitted(r) == Catch::Approx(noise.mean()).margin(1e-13));

    auto states = random_states(2000, 3, 9);
    states.col(1).setZero();
    states.col(2).setZero();
    const Eigen::VectorXd targets = 1.7 * states.col(0);
    const Eigen::VectorXd f2 = cond_expectation({3, 2, 1e-8}, states, targets);
    CHECK((f2 - targets).cwiseAbs().maxCoeff() <= 1e-10 * targets.cwiseAbs().maxCoeff());
}

TEST_CASE("mean preservation", "[regression][property]") {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const auto states = random_states(3000, 3, seed);
        RngStream rs(seed, 9);
        Eigen::VectorXd targets(3000);
        for (Eigen::Index r = 0; r < 3000; ++r) {
            targets(r) = std::exp(0.3 * states(r, 0)) - 10.0 * states(r, 2) + 1e3 + rs.normal();
        }
        for (double ridge : {0.0, 1e-8, 1e-2}) {
            const Eigen::VectorXd fitted = cond_expectation({3, 2, ridge}, states, targets);
            CHECK(rel_mean_gap(fitted, targets) <= 1e-10);
        }
    }
}

TEST_CASE("residual orthogonality without ridge", "[regression][property]") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const auto states = random_states(2500, 3, seed + 100);
        RngStream rs(seed, 3);
        Eigen::VectorXd targets(2500);
        for (Eigen::Index r = 0; r < 2500; ++r) {
            targets(r) = std::sin(states(r, 0)) * states(r, 1) + rs.normal();
        }
        const auto dm = design_matrix({3, 2, 0.0}, states);
        const auto fit = fit_least_squares(dm.matrix, targets, 0.0);
        const Eigen::VectorXd resid = targets - dm.matrix * fit.coefficients;
        const double lhs = (dm.matrix.transpose() * resid).cwiseAbs().maxCoeff();
        const double rhs = 1e-8 * dm.matrix.cwiseAbs().maxCoeff() * targets.cwiseAbs().maxCoeff();
        CHECK(lhs <= rhs);
    }
}

TEST_CASE("row permutation permutes fitted values", "[regression][property]") {
    const int m = 1500;
    const auto states = random_states(m, 3, 21);
    RngStream rs(21, 4);
    Eigen::VectorXd targets(m);
    for (auto& v : targets) v = rs.normal();
    std::vector<int> perm(m);
    std::iota(perm.begin(), perm.end(), 0);
    for (int k = m - 1; k > 0; --k) std::swap(perm[k], perm[static_cast<int>(rs.uniform() * (k + 1))]);

    Eigen::MatrixXd ps(m, 3);
    Eigen::VectorXd pt(m);
    for (int r = 0; r < m; ++r) {
        ps.row(r) = states.row(perm[r]);
        pt(r) = targets(perm[r]);
    }
    const BasisSpec spec{3, 2, 1e-8};
    const Eigen::VectorXd f = cond_expectation(spec, states, targets);
    const Eigen::VectorXd fp = cond_expectation(spec, ps, pt);
    const double tol = 1e-12 * std::max(1.0, f.cwiseAbs().maxCoeff());
    for (int r = 0; r < m; ++r) CHECK(std::fabs(fp(r) - f(perm[r])) <= tol);
}

TEST_CASE("design matrix independent of worker count", "[regression][property]") {
    const auto states = random_states(5003, 3, 31);
    const auto a = design_matrix({3, 2, 1e-8}, states, 1);
    const auto b = design_matrix({3, 2, 1e-8}, states, 8);
    CHECK(a.matrix == b.matrix);
    CHECK_THROWS_AS(design_matrix({2, 2, 1e-8}, states), Error);
    Eigen::MatrixXd bad = states;
    bad(7, 1) = std::nan("");
    CHECK_THROWS_AS(design_matrix({3, 2, 1e-8}, bad), Error);
}
