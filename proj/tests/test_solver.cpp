#include <catch2/catch_amalgamated.hpp>

#include "sep/solver.hpp"

#include <cmath>
#include <limits>

using namespace sep;

namespace {

ZBounds bounds_for(const CoefficientField& field, const TargetLaw& law) {
    return compute_bounds(field, law, check_assumptions(field, law));
}

SolverConfig small_config(int paths, int steps, int iterations, std::uint64_t seed = 1) {
    SolverConfig cfg;
    cfg.n_paths = paths;
    cfg.n_steps = steps;
    cfg.n_iterations = iterations;
    cfg.seed = seed;
    return cfg;
}

ForwardState brownian_forward(int paths, int steps, std::uint64_t seed) {
    SolverConfig cfg = small_config(paths, steps, 1, seed);
    ForwardState f;
    f.W = detail::simulate_grid_brownian(cfg);
    f.X2.resize(paths, steps + 1);
    for (int i = 0; i <= steps; ++i) f.X2.col(i).setConstant(static_cast<double>(i) / steps);
    f.X3 = Eigen::MatrixXd::Zero(paths, steps + 1);
    return f;
}

double rms_stat(const Eigen::MatrixXd& m, double target) {
    return std::sqrt((m.array() - target).square().mean());
}

const SigmoidFamily kPaperSigmoid{{2.0, 0.5, 2.0}, {1.5, -2.5, 0.5}};

}  // namespace

TEST_CASE("truncation", "[solver]") {
    ZBounds zb;
    zb.z_check = 0.111;
    zb.z_hat = 1.2649;
    CHECK(truncate_z(2.0, zb) == 1.2649);
    CHECK(truncate_z(zb.z_check, zb) == zb.z_check);
    CHECK(truncate_z(0.5, zb) == 0.5);
    CHECK(truncate_z(-3.0, zb) == zb.z_check);
}

TEST_CASE("initial iterate", "[solver]") {
    const auto cfg = small_config(30, 5, 1);
    const auto s1 = init_iterate(cfg, normal_law(1.0));
    CHECK((s1.Z.array() == 1.0).all());
    CHECK((s1.X2.array() == 0.0).all());
    CHECK((s1.X3.array() == 0.0).all());
    CHECK((s1.Y.array() == 0.0).all());
    CHECK((s1.W.array() == 0.0).all());
    CHECK(s1.Z.rows() == 30);
    CHECK(s1.Z.cols() == 6);
    const auto s2 = init_iterate(cfg, normal_law(2.0));
    CHECK((s2.Z.array() == 2.0).all());
}

TEST_CASE("configuration validation", "[solver]") {
    auto cfg = small_config(100, 20, 0);
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg.n_iterations = 1;
    cfg.n_steps = 1;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg.n_steps = 4;
    cfg.n_paths = 9;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg.n_paths = 10;
    CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("single Euler step of the time change", "[solver]") {
    auto field = bm_drift_field(0.0);
    field.sigma = [](double, double) { return 2.0; };
    field.epsilon = 2.0;
    field.norms.sigma_sup = 2.0;
    ZBounds zb;
    zb.z_check = zb.z_hat = 1.0;
    const auto cfg = small_config(10, 20, 1);
    auto prev = init_iterate(cfg, normal_law(1.0));
    auto stores = make_stores(cfg);
    const auto fwd = forward_pass(prev, stores, field, zb, cfg);
    CHECK(fwd.X2(0, 1) == 0.0125);
    CHECK(fwd.X2(3, 1) == 0.0125);
}

TEST_CASE("forward pass for Brownian motion with drift", "[solver]") {
    const double m = 1.5;
    for (double alpha : {1.0, 0.5}) {
        const auto field = bm_drift_field(m);
        const auto law = normal_law(alpha);
        const auto zb = bounds_for(field, law);
        const auto cfg = small_config(10000, 20, 1, 3);
        auto stores = make_stores(cfg);
        const auto fwd = forward_pass(init_iterate(cfg, law), stores, field, zb, cfg);
        for (int i = 0; i <= 20; ++i) {
            const double t = alpha * alpha * i / 20.0;
            CHECK((fwd.X2.col(i).array() - t).abs().maxCoeff() <= 1e-12);
            CHECK((fwd.X3.col(i).array() - m * t).abs().maxCoeff() <= 1e-12);
        }
        const Eigen::VectorXd w1 = fwd.W.col(20);
        const double var = (w1.array() - w1.mean()).square().sum() / (w1.size() - 1.0);
        CHECK(std::fabs(var - 1.0) <= 0.05);
    }
}

TEST_CASE("backward pass recovers the Gaussian martingale", "[solver]") {
    const double alpha = 1.3;
    const auto fwd = brownian_forward(10000, 20, 5);
    const auto bwd = backward_pass(fwd, normal_law(alpha), {3, 2, 1e-8});
    CHECK(rms_stat(bwd.Z.leftCols(20), alpha) <= 0.05 * alpha);
    CHECK(std::sqrt((bwd.Y.col(10) - alpha * fwd.W.col(10)).squaredNorm() / 10000.0) <= 0.05 * alpha);
    CHECK(bwd.max_martingale_defect <= 1e-10);
    CHECK((bwd.Z.col(20).array() == bwd.Z.col(19).array()).all());
    CHECK(std::fabs(bwd.y0) <= 4.0 * bwd.y0_std_error + 1e-12);
}

TEST_CASE("constant terminal value", "[solver]") {
    TargetLaw law = normal_law(1.0);
    law.g = [](double) { return 0.8; };
    const auto fwd = brownian_forward(500, 10, 6);
    const auto bwd = backward_pass(fwd, law, {3, 2, 1e-8});
    CHECK(bwd.y0 == Catch::Approx(0.8).epsilon(1e-13));
    CHECK((bwd.Y.array() - 0.8).abs().maxCoeff() <= 1e-12);
    CHECK(bwd.Z.cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("analytic drift case", "[solver]") {
    const double m = 1.5;
    const auto field = bm_drift_field(m);
    const auto law = normal_law(1.0);
    const auto zb = bounds_for(field, law);
    const auto cfg = small_config(10000, 20, 10, 11);
    const auto res = picard_solve(cfg, field, law, zb);
    for (double t : res.tau) CHECK(std::fabs(t - 1.0) <= 1e-12);
    CHECK(res.y0 >= -1.55);
    CHECK(res.y0 <= -1.45);
    CHECK(res.iterations_used <= 10);
    CHECK(res.history.size() == static_cast<std::size_t>(res.iterations_used));
    CHECK(res.max_martingale_defect <= 1e-10);
    CHECK(res.stores.size() == 10000);
}

TEST_CASE("Bass case", "[solver]") {
    const auto field = bm_drift_field(0.0);
    const auto law = normal_law(1.0);
    const auto cfg = small_config(10000, 20, 5, 12);
    const auto res = picard_solve(cfg, field, law, bounds_for(field, law));
    for (double t : res.tau) CHECK(std::fabs(t - 1.0) <= 1e-12);
    CHECK(std::fabs(res.y0) <= 4.0 * res.y0_std_error);
    CHECK(rms_stat(res.state.Z.leftCols(20), 1.0) <= 0.05);
}

TEST_CASE("sigmoid run respects every a-priori bound", "[solver][property]") {
    const auto field = sigmoid_field(kPaperSigmoid, 1.0);
    const auto law = normal_law(1.0);
    const auto zb = bounds_for(field, law);
    auto cfg = small_config(2000, 20, 8, 13);
    const auto res = picard_solve(cfg, field, law, zb);
    CHECK(count_x2_sandwich_violations(res.state.X2, zb, field.norms.sigma_sup, field.epsilon) == 0);
    for (double t : res.tau) {
        CHECK(t >= zb.tau_lo);
        CHECK(t <= zb.tau_hi);
    }
    for (Eigen::Index p = 0; p < res.state.X2.rows(); ++p) {
        for (Eigen::Index i = 0; i < 20; ++i) CHECK(res.state.X2(p, i + 1) > res.state.X2(p, i));
        CHECK(res.state.X2(p, 0) == 0.0);
        CHECK(res.state.X3(p, 0) == 0.0);
        CHECK(res.state.W(p, 0) == 0.0);
    }
    const Eigen::MatrixXd tz = res.state.Z.unaryExpr([&](double z) { return truncate_z(z, zb); });
    CHECK(tz.minCoeff() >= zb.z_check);
    CHECK(tz.maxCoeff() <= zb.z_hat);
    CHECK(res.max_martingale_defect <= 1e-10);
}

TEST_CASE("results do not depend on the worker count", "[solver][property]") {
    const auto field = sigmoid_field(kPaperSigmoid, 1.0);
    const auto law = normal_law(1.0);
    const auto zb = bounds_for(field, law);
    auto cfg = small_config(1500, 10, 4, 21);
    cfg.workers = 1;
    const auto a = picard_solve(cfg, field, law, zb);
    cfg.workers = 8;
    const auto b = picard_solve(cfg, field, law, zb);
    CHECK(a.y0 == b.y0);
    CHECK(a.tau == b.tau);
    CHECK(a.state.W == b.state.W);
    CHECK(a.state.Y == b.state.Y);
    CHECK(a.state.Z == b.state.Z);
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t k = 0; k < a.history.size(); ++k) CHECK(a.history[k].rms_change == b.history[k].rms_change);

    cfg.mode = SolveMode::weak;
    cfg.workers = 1;
    const auto wa = solve_weak(cfg, field, law, zb);
    cfg.workers = 8;
    const auto wb = solve_weak(cfg, field, law, zb);
    CHECK(wa.picard.y0 == wb.picard.y0);
    CHECK(wa.b_increments == wb.b_increments);
}

TEST_CASE("equal seeds reproduce, different seeds differ", "[solver]") {
    const auto field = bm_drift_field(0.5);
    const auto law = normal_law(1.0);
    const auto zb = bounds_for(field, law);
    const auto a = picard_solve(small_config(300, 10, 3, 5), field, law, zb);
    const auto b = picard_solve(small_config(300, 10, 3, 5), field, law, zb);
    const auto c = picard_solve(small_config(300, 10, 3, 6), field, law, zb);
    CHECK(a.y0 == b.y0);
    CHECK(a.y0 != c.y0);
}

TEST_CASE("solver error paths", "[solver]") {
    const auto law = normal_law(1.0);

    auto thin = bm_drift_field(0.0);
    thin.sigma = [](double, double) { return 0.5; };
    ZBounds zb;
    zb.z_check = zb.z_hat = 1.0;
    try {
        (void)picard_solve(small_config(50, 5, 2), thin, law, zb);
        FAIL("expected an ellipticity violation");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::ellipticity_violation);
    }

    TargetLaw exploding = law;
    exploding.g = [](double x) { return x > 0.5 ? std::numeric_limits<double>::quiet_NaN() : x; };
    const auto field = bm_drift_field(0.0);
    try {
        (void)picard_solve(small_config(200, 5, 3), field, exploding, zb);
        FAIL("expected DIVERGED");
    } catch (const DivergedError& e) {
        CHECK(e.code() == ErrorCode::diverged);
        CHECK(e.iteration() == 1);
    }

    const auto table = tabulated_law({0.1, 0.5, 0.9}, {-1.0, 0.0, 1.0}, 2.0);
    const auto weak_zb = compute_bounds(field, table, check_assumptions(field, table), false);
    try {
        (void)picard_solve(small_config(50, 5, 2), field, table, weak_zb);
        FAIL("expected MODE_ERROR");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::mode_error);
    }
    CHECK_NOTHROW(solve_weak(small_config(200, 5, 2), field, table, weak_zb));

    auto ou = bm_drift_field(0.0);
    ou.norms.inf_term = -1.0;
    try {
        (void)picard_solve(small_config(50, 5, 2), ou, law, zb);
        FAIL("expected ASSUMPTION_VIOLATED");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::assumption_violated);
    }
    auto forced = small_config(50, 5, 2);
    forced.force = true;
    CHECK_NOTHROW(picard_solve(forced, ou, law, zb));
}

TEST_CASE("weak mode reconstructs B", "[solver]") {
    const auto field = bm_drift_field(0.0);
    const auto law = normal_law(1.0);
    const auto zb = bounds_for(field, law);
    auto cfg = small_config(2000, 20, 3, 17);
    cfg.mode = SolveMode::weak;
    const auto res = solve_weak(cfg, field, law, zb);
    const auto& st = res.picard.state;
    for (Eigen::Index p = 0; p < 2000; ++p) {
        for (Eigen::Index j = 0; j < 20; ++j) {
            CHECK(res.b_increments(p, j) == st.Y(p, j + 1) - st.Y(p, j));
        }
    }
    REQUIRE(res.picard.stores.size() == 2000);
    const auto& s0 = res.picard.stores[0];
    CHECK(s0.points().front().t == 0.0);
    CHECK(s0.stream().position() == 20);
}

TEST_CASE("weak-mode quadratic variation matches tau", "[solver][statistical]") {
    const auto field = bm_drift_field(0.0);
    const auto law = normal_law(1.0);
    const auto zb = bounds_for(field, law);
    auto cfg = small_config(4000, 200, 3, 19);
    cfg.mode = SolveMode::weak;
    const auto res = solve_weak(cfg, field, law, zb);
    double ratio = 0.0;
    for (Eigen::Index p = 0; p < 4000; ++p) {
        ratio += res.b_increments.row(p).squaredNorm() / res.picard.tau[static_cast<std::size_t>(p)];
    }
    ratio /= 4000.0;
    CHECK(std::fabs(ratio - 1.0) <= 0.10);
}

TEST_CASE("weak and strong agree on the drift case", "[solver][statistical]") {
    const auto field = bm_drift_field(1.5);
    const auto law = normal_law(1.0);
    const auto zb = bounds_for(field, law);
    auto cfg = small_config(10000, 20, 10, 23);
    const auto strong = picard_solve(cfg, field, law, zb);
    cfg.mode = SolveMode::weak;
    const auto weak = solve_weak(cfg, field, law, zb).picard;
    const double se = std::hypot(strong.y0_std_error, weak.y0_std_error);
    CHECK(std::fabs(strong.y0 - weak.y0) <= 3.0 * se);
}

TEST_CASE("decoupled oracle", "[solver]") {
    const auto law = normal_law(1.0);
    {
        const auto field = bm_drift_field(0.0);
        const auto res = solve_homogeneous_oracle(small_config(5000, 20, 1, 29), field, law,
                                                  bounds_for(field, law));
        for (double t : res.tau) CHECK(std::fabs(t - 1.0) <= 1e-12);
        CHECK(std::fabs(res.y0) <= 4.0 * res.y0_std_error);
    }
    {
        const auto field = bm_drift_field(1.5);
        const auto res = solve_homogeneous_oracle(small_config(10000, 20, 1, 31), field, law,
                                                  bounds_for(field, law));
        CHECK(std::fabs(res.y0 + 1.5) <= 0.05);
    }
    const auto timed = sigmoid_field(kPaperSigmoid, 1.0);
    try {
        (void)solve_homogeneous_oracle(small_config(100, 5, 1), timed, law, bounds_for(timed, law));
        FAIL("expected MODE_ERROR");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::mode_error);
    }
}

TEST_CASE("weak-mode B at tau carries every Y increment", "[solver]") {
    // Exponential target with no lower Z bound: truncation can stall the clock.
    const auto field = bm_drift_field(0.0);
    const auto law = exponential_law(1.0);
    const auto zb = compute_bounds(field, law, check_assumptions(field, law), false);
    auto cfg = small_config(3000, 20, 6, 37);
    cfg.mode = SolveMode::weak;
    auto res = solve_weak(cfg, field, law, zb);
    const auto& st = res.picard.state;
    std::size_t stalled = 0;
    for (Eigen::Index p = 0; p < st.X2.rows(); ++p) {
        for (Eigen::Index j = 0; j < 20; ++j) stalled += st.X2(p, j + 1) == st.X2(p, j) ? 1 : 0;
        auto& store = res.picard.stores[static_cast<std::size_t>(p)];
        const double b_tau = store.sample_at(res.picard.tau[static_cast<std::size_t>(p)]);
        CHECK(b_tau == Catch::Approx(st.Y(p, 20) - st.Y(p, 0)).margin(1e-12));
    }
    CHECK(stalled > 0);
}
