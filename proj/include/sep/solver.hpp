#pragma once

#include "sep/analysis.hpp"
#include "sep/error.hpp"
#include "sep/model.hpp"
#include "sep/parallel.hpp"
#include "sep/paths.hpp"
#include "sep/regression.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace sep {

enum class SolveMode { strong, weak };

inline std::string_view to_string(SolveMode m) noexcept {
    return m == SolveMode::strong ? "strong" : "weak";
}

/// Relative slack allowed when comparing X2 increments and tau against their
/// a-priori bounds; covers the different rounding of dt * (z / s)^2 and
/// dt * z^2 / s^2.
inline constexpr double kBoundSlack = 1e-12;

struct SolverConfig {
    int n_steps = 20;
    int n_paths = 10000;
    int n_iterations = 50;
    double tol_picard = 1e-4;
    SolveMode mode = SolveMode::strong;
    std::uint64_t seed = 1;
    BasisSpec basis{3, 2, 1e-8};
    unsigned workers = 1;
    /// Run even when the admissibility checks fail.
    bool force = false;

    [[nodiscard]] double dt() const noexcept { return 1.0 / n_steps; }

    void validate() const {
        if (n_steps < 2) throw Error(ErrorCode::config, "n_steps must be >= 2");
        if (n_iterations < 1) throw Error(ErrorCode::config, "n_iterations must be >= 1");
        if (!(tol_picard > 0.0)) throw Error(ErrorCode::config, "tol_picard must be > 0");
        if (basis.dimension < 1 || basis.degree < 0 || basis.ridge < 0.0) {
            throw Error(ErrorCode::config, "invalid regression basis");
        }
        if (n_paths < static_cast<int>(basis.size())) {
            throw Error(ErrorCode::config, "n_paths must be at least the basis size (" +
                                               std::to_string(basis.size()) + ")");
        }
    }
};

/// Per-path (rows) by per-grid-time (columns) arrays of one Picard iterate.
struct IterationState {
    int k = 0;
    Eigen::MatrixXd W;
    Eigen::MatrixXd X2;
    Eigen::MatrixXd X3;
    Eigen::MatrixXd Y;
    Eigen::MatrixXd Z;
    double y0 = 0.0;
};

struct ForwardState {
    Eigen::MatrixXd W;
    Eigen::MatrixXd X2;
    Eigen::MatrixXd X3;
};

struct BackwardResult {
    Eigen::MatrixXd Y;
    Eigen::MatrixXd Z;
    double y0 = 0.0;
    double y0_std_error = 0.0;
    /// Largest |mean(Y_{i-1}) - mean(Y_i)| / rms(Y_i) over the sweep.
    double max_martingale_defect = 0.0;
};

struct ConvergenceRecord {
    int iteration = 0;
    double rms_change = 0.0;
    double y0 = 0.0;
};

struct PicardResult {
    IterationState state;
    double y0 = 0.0;
    double y0_std_error = 0.0;
    std::vector<double> tau;
    int iterations_used = 0;
    bool converged = false;
    std::vector<ConvergenceRecord> history;
    double max_martingale_defect = 0.0;
    /// Brownian trajectories B per path; in weak mode the reconstructed B.
    std::vector<PathStore> stores;
    SolveMode mode = SolveMode::strong;
};

inline double truncate_z(double z, const ZBounds& zb) noexcept {
    return std::min(std::max(z, zb.z_check), zb.z_hat);
}

/// Z = ||g'|| everywhere, all other arrays zero.
inline IterationState init_iterate(const SolverConfig& cfg, const TargetLaw& law) {
    const Eigen::Index m = cfg.n_paths;
    const Eigen::Index n = cfg.n_steps + 1;
    IterationState s;
    s.k = 0;
    s.W = Eigen::MatrixXd::Zero(m, n);
    s.X2 = Eigen::MatrixXd::Zero(m, n);
    s.X3 = Eigen::MatrixXd::Zero(m, n);
    s.Y = Eigen::MatrixXd::Zero(m, n);
    s.Z = Eigen::MatrixXd::Constant(m, n, law.g_prime_sup);
    return s;
}

inline std::vector<PathStore> make_stores(const SolverConfig& cfg) {
    std::vector<PathStore> stores;
    stores.reserve(static_cast<std::size_t>(cfg.n_paths));
    for (int p = 0; p < cfg.n_paths; ++p) {
        stores.emplace_back(RngStream(cfg.seed, static_cast<std::uint64_t>(p)));
    }
    return stores;
}

namespace detail {

/// Euler step of the time change and the drift accumulator along one path.
/// When `stores` is non-empty W is rebuilt from B increments at the new X2
/// times; otherwise `fixed_w` is copied through.
inline void forward_path(Eigen::Index p, const IterationState& prev, const CoefficientField& field,
                         const ZBounds& zb, double dt, PathStore* store,
                         const Eigen::MatrixXd* fixed_w, ForwardState& out) {
    const Eigen::Index n = prev.Y.cols() - 1;
    out.X2(p, 0) = 0.0;
    out.X3(p, 0) = 0.0;
    out.W(p, 0) = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double t = out.X2(p, i);
        const double a = prev.Y(p, i) + out.X3(p, i);
        const double s = field.sigma_at(t, a);
        const double m = field.mu_at(t, a);
        const double z = truncate_z(prev.Z(p, i), zb);
        const double ratio = z / s;
        const double rate = ratio * ratio;
        out.X2(p, i + 1) = t + dt * rate;
        out.X3(p, i + 1) = out.X3(p, i) + dt * m * rate;
        if (store != nullptr) {
            out.W(p, i + 1) = out.W(p, i) + (s / z) * store->increment(t, out.X2(p, i + 1));
        } else {
            out.W(p, i + 1) = (*fixed_w)(p, i + 1);
        }
    }
}

inline bool all_finite(const Eigen::MatrixXd& m) { return m.allFinite(); }

inline double mean_of(const Eigen::VectorXd& v) { return v.mean(); }

inline double std_error_of(const Eigen::VectorXd& v) {
    const double n = static_cast<double>(v.size());
    if (v.size() < 2) return 0.0;
    const double mean = v.mean();
    const double var = (v.array() - mean).square().sum() / (n - 1.0);
    return std::sqrt(var / n);
}

}  // namespace detail

/// Strong-mode forward sweep: X2, X3 by explicit Euler with T(Z^k) and the
/// coefficients at (X2^{k+1}, Y^k + X3^{k+1}); W from increments of B over
/// [X2_{t_i}, X2_{t_{i+1}}] divided by T(Z)/sigma.
inline ForwardState forward_pass(const IterationState& prev, std::span<PathStore> stores,
                                 const CoefficientField& field, const ZBounds& zb,
                                 const SolverConfig& cfg) {
    const Eigen::Index m = prev.Y.rows();
    const Eigen::Index n = prev.Y.cols();
    if (static_cast<Eigen::Index>(stores.size()) != m) {
        throw Error(ErrorCode::domain, "one path store per path is required");
    }
    if (!(zb.z_check > 0.0)) {
        throw Error(ErrorCode::mode_error, "strong mode needs a positive lower Z bound");
    }
    ForwardState out{Eigen::MatrixXd(m, n), Eigen::MatrixXd(m, n), Eigen::MatrixXd(m, n)};
    const double dt = 1.0 / static_cast<double>(n - 1);
    parallel_for(static_cast<std::size_t>(m), cfg.workers, [&](std::size_t b, std::size_t e) {
        for (std::size_t p = b; p < e; ++p) {
            detail::forward_path(static_cast<Eigen::Index>(p), prev, field, zb, dt, &stores[p],
                                 nullptr, out);
        }
    });
    return out;
}

/// Weak-mode forward sweep: W is the given primitive Brownian motion.
inline ForwardState forward_pass_weak(const IterationState& prev, const Eigen::MatrixXd& w,
                                      const CoefficientField& field, const ZBounds& zb,
                                      const SolverConfig& cfg) {
    const Eigen::Index m = prev.Y.rows();
    const Eigen::Index n = prev.Y.cols();
    ForwardState out{Eigen::MatrixXd(m, n), Eigen::MatrixXd(m, n), Eigen::MatrixXd(m, n)};
    const double dt = 1.0 / static_cast<double>(n - 1);
    parallel_for(static_cast<std::size_t>(m), cfg.workers, [&](std::size_t b, std::size_t e) {
        for (std::size_t p = b; p < e; ++p) {
            detail::forward_path(static_cast<Eigen::Index>(p), prev, field, zb, dt, nullptr, &w,
                                 out);
        }
    });
    return out;
}

/// Number of (path, step) pairs whose X2 increment leaves
/// [dt * z_check^2 / ||sigma||^2, dt * z_hat^2 / epsilon^2].
inline std::size_t count_x2_sandwich_violations(const Eigen::MatrixXd& x2, const ZBounds& zb,
                                                double sigma_sup, double epsilon) {
    const Eigen::Index n = x2.cols() - 1;
    const double dt = 1.0 / static_cast<double>(n);
    const double lo = dt * zb.z_check * zb.z_check / (sigma_sup * sigma_sup) * (1.0 - kBoundSlack);
    const double hi = dt * zb.z_hat * zb.z_hat / (epsilon * epsilon) * (1.0 + kBoundSlack);
    std::size_t bad = 0;
    for (Eigen::Index p = 0; p < x2.rows(); ++p) {
        for (Eigen::Index i = 0; i < n; ++i) {
            const double inc = x2(p, i + 1) - x2(p, i);
            if (!(inc >= lo && inc <= hi)) ++bad;
        }
    }
    return bad;
}

/// Backward sweep: terminal Y = g(W_1) - X3_1, then for i = n..1
/// Y_{i-1} = E[Y_i | F_{i-1}] and
/// Z_{i-1} = E[(Y_i - E[Y_i | F_{i-1}]) (W_i - W_{i-1}) | F_{i-1}] / dt,
/// both regressed on (W, X2, X3) at t_{i-1}; plain means at i = 1.
inline BackwardResult backward_pass(const ForwardState& fwd, const TargetLaw& law,
                                    const BasisSpec& basis, unsigned workers = 1) {
    const Eigen::Index m = fwd.W.rows();
    const Eigen::Index n = fwd.W.cols() - 1;
    const double dt = 1.0 / static_cast<double>(n);
    if (basis.dimension != 3) throw Error(ErrorCode::config, "the coupled solver regresses on 3 states");

    BackwardResult out;
    out.Y.resize(m, n + 1);
    out.Z.resize(m, n + 1);
    for (Eigen::Index p = 0; p < m; ++p) {
        out.Y(p, n) = law.g(fwd.W(p, n)) - fwd.X3(p, n);
    }
    out.y0_std_error = detail::std_error_of(out.Y.col(n));

    Eigen::MatrixXd states(m, 3);
    for (Eigen::Index i = n; i >= 1; --i) {
        const Eigen::VectorXd target = out.Y.col(i);
        const Eigen::VectorXd dw = fwd.W.col(i) - fwd.W.col(i - 1);
        Eigen::VectorXd y_hat;
        if (i == 1) {
            y_hat = Eigen::VectorXd::Constant(m, target.mean());
            const Eigen::VectorXd z_target = (target - y_hat).cwiseProduct(dw) / dt;
            out.Z.col(0).setConstant(z_target.mean());
        } else {
            states.col(0) = fwd.W.col(i - 1);
            states.col(1) = fwd.X2.col(i - 1);
            states.col(2) = fwd.X3.col(i - 1);
            y_hat = cond_expectation(basis, states, target, workers);
            const Eigen::VectorXd z_target = (target - y_hat).cwiseProduct(dw) / dt;
            out.Z.col(i - 1) = cond_expectation(basis, states, z_target, workers);
        }
        out.Y.col(i - 1) = y_hat;

        const double mt = target.mean();
        const double scale = std::max(std::sqrt(target.squaredNorm() / static_cast<double>(m)),
                                      std::numeric_limits<double>::min());
        const double defect = std::fabs(y_hat.mean() - mt) / scale;
        out.max_martingale_defect = std::max(out.max_martingale_defect, defect);
    }
    out.Z.col(n) = out.Z.col(n - 1);
    out.y0 = out.Y(0, 0);
    out.Y.col(0).setConstant(out.y0);
    return out;
}

namespace detail {

inline AssumptionReport require_admissible(const SolverConfig& cfg, const CoefficientField& field,
                                           const TargetLaw& law) {
    cfg.validate();
    AssumptionReport rep = check_assumptions(field, law);
    if (!rep.holds && !cfg.force) {
        std::string names;
        for (const auto& f : rep.failed_checks) names += (names.empty() ? "" : ", ") + f.name;
        throw Error(ErrorCode::assumption_violated, "failed checks: " + names);
    }
    return rep;
}

/// Primitive W on the uniform grid from each path's stream.
inline Eigen::MatrixXd simulate_grid_brownian(const SolverConfig& cfg) {
    const Eigen::Index m = cfg.n_paths;
    const Eigen::Index n = cfg.n_steps;
    Eigen::MatrixXd w(m, n + 1);
    const double sq = std::sqrt(cfg.dt());
    parallel_for(static_cast<std::size_t>(m), cfg.workers, [&](std::size_t b, std::size_t e) {
        for (std::size_t p = b; p < e; ++p) {
            RngStream rs(cfg.seed, static_cast<std::uint64_t>(p));
            const auto row = static_cast<Eigen::Index>(p);
            w(row, 0) = 0.0;
            for (Eigen::Index i = 0; i < n; ++i) w(row, i + 1) = w(row, i) + sq * rs.normal();
        }
    });
    return w;
}

template <typename Forward>
PicardResult picard_loop(const SolverConfig& cfg, const CoefficientField& field,
                         const TargetLaw& law, const ZBounds& zb, Forward&& forward) {
    PicardResult res;
    res.mode = cfg.mode;
    IterationState state = init_iterate(cfg, law);
    for (int k = 0; k < cfg.n_iterations; ++k) {
        ForwardState fwd = forward(state);
        if (!all_finite(fwd.X2) || !all_finite(fwd.X3) || !all_finite(fwd.W)) {
            throw DivergedError(k + 1, "non-finite forward state");
        }
        const std::size_t bad =
            count_x2_sandwich_violations(fwd.X2, zb, field.norms.sigma_sup, field.epsilon);
        if (bad != 0) {
            throw Error(ErrorCode::assumption_violated,
                        std::to_string(bad) +
                            " X2 increments left their a-priori interval; the declared norms "
                            "do not bound the coefficients");
        }
        BackwardResult bwd = backward_pass(fwd, law, cfg.basis, cfg.workers);
        if (!all_finite(bwd.Y) || !all_finite(bwd.Z)) {
            throw DivergedError(k + 1, "non-finite backward state");
        }
        const double rms = std::sqrt((bwd.Y - state.Y).squaredNorm() /
                                     static_cast<double>(bwd.Y.size()));
        res.max_martingale_defect = std::max(res.max_martingale_defect, bwd.max_martingale_defect);

        state.k = k + 1;
        state.W = std::move(fwd.W);
        state.X2 = std::move(fwd.X2);
        state.X3 = std::move(fwd.X3);
        state.Y = std::move(bwd.Y);
        state.Z = std::move(bwd.Z);
        state.y0 = bwd.y0;
        res.y0_std_error = bwd.y0_std_error;
        res.history.push_back({k + 1, rms, bwd.y0});
        res.iterations_used = k + 1;
        if (rms < cfg.tol_picard) {
            res.converged = true;
            break;
        }
    }
    res.y0 = state.y0;
    const Eigen::Index n = state.X2.cols() - 1;
    res.tau.assign(state.X2.col(n).data(), state.X2.col(n).data() + state.X2.rows());
    res.state = std::move(state);
    return res;
}

}  // namespace detail

/// Picard iteration of the truncated, Euler-discretized system driven by B
/// (strong mode). Stops after n_iterations or when the RMS change of Y over
/// all paths and grid times drops below tol_picard.
inline PicardResult picard_solve(const SolverConfig& cfg, const CoefficientField& field,
                                 const TargetLaw& law, const ZBounds& zb) {
    detail::require_admissible(cfg, field, law);
    if (!zb.has_lower || !(zb.z_check > 0.0)) {
        throw Error(ErrorCode::mode_error, "strong mode needs ||1/g'|| for the lower Z bound");
    }
    std::vector<PathStore> stores = make_stores(cfg);
    PicardResult res = detail::picard_loop(cfg, field, law, zb, [&](const IterationState& s) {
        return forward_pass(s, stores, field, zb, cfg);
    });
    res.stores = std::move(stores);
    res.mode = SolveMode::strong;
    return res;
}

struct WeakResult {
    PicardResult picard;
    /// Reconstructed B increments over [X2_{t_j}, X2_{t_{j+1}}], paths x steps.
    Eigen::MatrixXd b_increments;
};

/// Solves the system with W as the primitive Brownian motion, then rebuilds B
/// on the time-changed grid from dB = dY / sigma. The rebuilt B is returned as
/// path stores so it can be refined further.
inline WeakResult solve_weak(const SolverConfig& cfg, const CoefficientField& field,
                             const TargetLaw& law, const ZBounds& zb) {
    detail::require_admissible(cfg, field, law);
    const Eigen::MatrixXd w = detail::simulate_grid_brownian(cfg);
    WeakResult out;
    out.picard = detail::picard_loop(cfg, field, law, zb, [&](const IterationState& s) {
        return forward_pass_weak(s, w, field, zb, cfg);
    });
    out.picard.mode = SolveMode::weak;

    const IterationState& st = out.picard.state;
    const Eigen::Index m = st.Y.rows();
    const Eigen::Index n = st.Y.cols() - 1;
    out.b_increments.resize(m, n);
    out.picard.stores.resize(static_cast<std::size_t>(m));
    parallel_for(static_cast<std::size_t>(m), cfg.workers, [&](std::size_t b, std::size_t e) {
        for (std::size_t pp = b; pp < e; ++pp) {
            const auto p = static_cast<Eigen::Index>(pp);
            std::vector<PathStore::Point> pts{{0.0, 0.0}};
            double bsum = 0.0;
            for (Eigen::Index j = 0; j < n; ++j) {
                const double s = field.sigma_at(st.X2(p, j), st.Y(p, j) + st.X3(p, j));
                const double db = (st.Y(p, j + 1) - st.Y(p, j)) / s;
                out.b_increments(p, j) = db;
                bsum += db;
                // A step whose clock did not advance (Z truncated to 0) still moved Y;
                // fold its increment into the latest point so B at tau matches.
                if (st.X2(p, j + 1) > pts.back().t) {
                    pts.push_back({st.X2(p, j + 1), bsum});
                } else if (pts.size() > 1) {
                    pts.back().b = bsum;
                } else if (db != 0.0) {
                    pts.push_back({std::nextafter(0.0, 1.0), bsum});
                }
            }
            out.picard.stores[pp] = PathStore::from_points(
                std::move(pts),
                RngStream(cfg.seed, static_cast<std::uint64_t>(pp),
                          static_cast<std::uint64_t>(cfg.n_steps)));
        }
    });
    return out;
}

struct OracleResult {
    double y0 = 0.0;
    double y0_std_error = 0.0;
    std::vector<double> tau;
    Eigen::MatrixXd Ybar;
    Eigen::MatrixXd Z;
};

/// Decoupled scheme for time-independent coefficients: the backward equation
/// for Ybar = Y + X3 has driver mu(Ybar) T(Z)^2 / sigma^2(Ybar) and no longer
/// depends on X2, which is recovered afterwards by quadrature. Conditional
/// expectations are regressions on the primitive W alone.
inline OracleResult solve_homogeneous_oracle(const SolverConfig& cfg, const CoefficientField& field,
                                             const TargetLaw& law, const ZBounds& zb,
                                             const BasisSpec& basis = BasisSpec{1, 3, 1e-8}) {
    cfg.validate();
    if (!field.time_homogeneous) {
        throw Error(ErrorCode::mode_error, "the decoupled oracle needs time-independent coefficients");
    }
    if (basis.dimension != 1) throw Error(ErrorCode::config, "the oracle regresses on W only");

    const Eigen::MatrixXd w = detail::simulate_grid_brownian(cfg);
    const Eigen::Index m = w.rows();
    const Eigen::Index n = w.cols() - 1;
    const double dt = cfg.dt();

    OracleResult out;
    out.Ybar.resize(m, n + 1);
    out.Z.resize(m, n + 1);
    Eigen::MatrixXd rate(m, n);
    Eigen::VectorXd pathwise(m);
    for (Eigen::Index p = 0; p < m; ++p) {
        out.Ybar(p, n) = law.g(w(p, n));
        pathwise(p) = out.Ybar(p, n);
    }

    for (Eigen::Index i = n; i >= 1; --i) {
        const Eigen::VectorXd target = out.Ybar.col(i);
        const Eigen::VectorXd dw = w.col(i) - w.col(i - 1);
        Eigen::VectorXd e_y, z;
        if (i == 1) {
            e_y = Eigen::VectorXd::Constant(m, target.mean());
            const Eigen::VectorXd zt = (target - e_y).cwiseProduct(dw) / dt;
            z = Eigen::VectorXd::Constant(m, zt.mean());
        } else {
            const Eigen::MatrixXd states = w.col(i - 1);
            e_y = cond_expectation(basis, states, target, cfg.workers);
            const Eigen::VectorXd zt = (target - e_y).cwiseProduct(dw) / dt;
            z = cond_expectation(basis, states, zt, cfg.workers);
        }
        out.Z.col(i - 1) = z;
        for (Eigen::Index p = 0; p < m; ++p) {
            const double y = e_y(p);
            const double tz = truncate_z(z(p), zb);
            const double s = field.sigma_at(0.0, y);
            const double r = (tz / s) * (tz / s);
            const double drift = field.mu_at(0.0, y) * r;
            out.Ybar(p, i - 1) = y - dt * drift;
            rate(p, i - 1) = r;
            pathwise(p) -= dt * drift;
        }
        if (!out.Ybar.col(i - 1).allFinite()) throw DivergedError(0, "non-finite oracle state");
    }
    out.Z.col(n) = out.Z.col(n - 1);
    out.y0 = out.Ybar(0, 0);
    out.y0_std_error = detail::std_error_of(pathwise);
    out.tau.resize(static_cast<std::size_t>(m));
    for (Eigen::Index p = 0; p < m; ++p) out.tau[static_cast<std::size_t>(p)] = dt * rate.row(p).sum();
    return out;
}

}  // namespace sep
