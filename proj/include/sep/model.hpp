#pragma once

#include "sep/error.hpp"
#include "sep/normal.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace sep {

/// Where a sup-norm came from. Bounds derived from grid estimates are advisory.
enum class NormProvenance { declared, grid_estimated };

/// Which of the three structural cases of the admissibility conditions holds:
/// the a-derivative of sigma vanishes, is nonnegative together with a
/// nonnegative time term, or is nonpositive together with a nonpositive one.
enum class SignCase { a_sigma_zero, case_ii, case_iii, unknown };

inline std::string_view to_string(NormProvenance p) noexcept {
    return p == NormProvenance::declared ? "DECLARED" : "GRID_ESTIMATED";
}

inline std::string_view to_string(SignCase c) noexcept {
    switch (c) {
    case SignCase::a_sigma_zero: return "A_SIGMA_ZERO";
    case SignCase::case_ii: return "CASE_II";
    case SignCase::case_iii: return "CASE_III";
    case SignCase::unknown: return "UNKNOWN";
    }
    return "UNKNOWN";
}

struct GridPoint {
    double t = 0.0;
    double a = 0.0;
};

/// Sup-norms of the coefficient ratios consumed by the bound formulas, plus
/// inf_term = inf over (t, a) of (sigma * d_a mu - 2 * d_a sigma * mu) / sigma^3.
struct CoefficientNorms {
    double sigma_sup = 0.0;
    double mu_over_sigma2 = 0.0;
    double dt_mu_over_sigma2 = 0.0;
    double da_mu_over_sigma2 = 0.0;
    double dt_sigma_over_sigma = 0.0;
    double da_sigma_over_sigma = 0.0;
    double inf_term = 0.0;
    NormProvenance provenance = NormProvenance::declared;
    std::optional<GridPoint> inf_witness;

    [[nodiscard]] bool all_finite_nonnegative() const noexcept {
        for (double v : {sigma_sup, mu_over_sigma2, dt_mu_over_sigma2, da_mu_over_sigma2,
                         dt_sigma_over_sigma, da_sigma_over_sigma}) {
            if (!std::isfinite(v) || v < 0.0) return false;
        }
        return std::isfinite(inf_term);
    }
};

using Coefficient = std::function<double(double, double)>;

inline std::string format_point(double t, double a) {
    std::ostringstream os;
    os.precision(17);
    os << "(t=" << t << ", a=" << a << ")";
    return os.str();
}

/// Drift and diffusion of dA = mu(t, A) dt + sigma(t, A) dW together with
/// their first partials and the norms declared for them.
struct CoefficientField {
    Coefficient mu;
    Coefficient sigma;
    Coefficient d_t_mu;
    Coefficient d_a_mu;
    Coefficient d_t_sigma;
    Coefficient d_a_sigma;
    double epsilon = 0.0;
    CoefficientNorms norms;
    SignCase sign_case = SignCase::unknown;
    bool time_homogeneous = false;

    /// sigma(t, a), rejecting values below the ellipticity floor.
    [[nodiscard]] double sigma_at(double t, double a) const {
        const double s = sigma(t, a);
        if (!std::isfinite(s)) {
            throw Error(ErrorCode::evaluation, "sigma not finite at " + format_point(t, a));
        }
        if (s < epsilon) {
            throw Error(ErrorCode::ellipticity_violation,
                        "sigma = " + std::to_string(s) + " below epsilon = " +
                            std::to_string(epsilon) + " at " + format_point(t, a));
        }
        return s;
    }

    [[nodiscard]] double mu_at(double t, double a) const {
        const double m = mu(t, a);
        if (!std::isfinite(m)) {
            throw Error(ErrorCode::evaluation, "mu not finite at " + format_point(t, a));
        }
        return m;
    }
};

/// Brownian motion with constant drift m and unit diffusion.
inline CoefficientField bm_drift_field(double m) {
    CoefficientField f;
    f.mu = [m](double, double) { return m; };
    f.sigma = [](double, double) { return 1.0; };
    const auto zero = [](double, double) { return 0.0; };
    f.d_t_mu = zero;
    f.d_a_mu = zero;
    f.d_t_sigma = zero;
    f.d_a_sigma = zero;
    f.epsilon = 1.0;
    f.norms.sigma_sup = 1.0;
    f.norms.mu_over_sigma2 = std::fabs(m);
    f.sign_case = SignCase::a_sigma_zero;
    f.time_homogeneous = true;
    return f;
}

// ---------------------------------------------------------------------------
// Sigmoid family
// ---------------------------------------------------------------------------

/// sigma(t, a) = p1 + p2 / (1 + e^-t) + p3 / (1 + e^-a), same shape for mu.
struct SigmoidFamily {
    std::array<double, 3> p_sigma{};
    std::array<double, 3> p_mu{};

    [[nodiscard]] double epsilon() const noexcept {
        return p_sigma[0] + std::min(0.0, p_sigma[1]) + std::min(0.0, p_sigma[2]);
    }
};

namespace detail {

inline double logistic(double x) noexcept {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

inline double logistic_prime(double x) noexcept {
    const double s = logistic(x);
    return s * (1.0 - s);
}

}  // namespace detail

/// Closed-form norms of a sigmoid family and its three admissibility margins.
struct SigmoidNorms {
    CoefficientNorms norms;
    double epsilon = 0.0;
    double mu_sup = 0.0;
    SignCase sign_case = SignCase::unknown;
    /// epsilon, the time-term sign margin of the chosen case, and the margin
    /// of 1 / ||g'||^2 + 2 * min(0, inf_term). Each must be positive.
    std::array<double, 3> admissibility{};
};

/// A failed admissibility inequality of the sigmoid closed forms.
struct SigmoidFailure {
    std::string name;
    std::string detail;
};

/// Closed forms for the sigmoid family together with every admissibility
/// inequality that fails. Derivative sups use the coarse |p| bounds (the
/// logistic slope is at most 1/4, so these dominate the true sups), and ratio
/// norms divide by the matching power of epsilon.
inline std::pair<SigmoidNorms, std::vector<SigmoidFailure>> sigmoid_norms_report(
    const SigmoidFamily& fam, double g_prime_sup) {
    const auto& ps = fam.p_sigma;
    const auto& pm = fam.p_mu;
    SigmoidNorms out;
    std::vector<SigmoidFailure> failures;
    out.epsilon = fam.epsilon();
    out.admissibility[0] = out.epsilon;
    if (!(out.epsilon > 0.0)) {
        failures.push_back({"sigmoid_epsilon", "p1 + min(0,p2) + min(0,p3) = " +
                                                   std::to_string(out.epsilon) + " must be > 0"});
        return {out, failures};
    }
    const double eps = out.epsilon;
    const double eps2 = eps * eps;

    out.norms.sigma_sup = ps[0] + std::max(0.0, ps[1]) + std::max(0.0, ps[2]);
    out.mu_sup = std::max(pm[0] + std::max(0.0, pm[1]) + std::max(0.0, pm[2]),
                          -pm[0] - std::min(0.0, pm[1]) - std::min(0.0, pm[2]));
    out.norms.mu_over_sigma2 = out.mu_sup / eps2;
    out.norms.dt_mu_over_sigma2 = std::fabs(pm[1]) / eps2;
    out.norms.da_mu_over_sigma2 = std::fabs(pm[2]) / eps2;
    out.norms.dt_sigma_over_sigma = std::fabs(ps[1]) / eps;
    out.norms.da_sigma_over_sigma = std::fabs(ps[2]) / eps;
    out.norms.provenance = NormProvenance::declared;

    // sigma * d_a mu - 2 d_a sigma * mu = s'(a) * (c0 + c1 s(t) - p3s p3m s(a)),
    // with s' <= 1/4 and sigma >= eps.
    const double bracket_lo = ps[0] * pm[2] - 2.0 * ps[2] * pm[0] +
                              std::min(0.0, ps[1] * pm[2] - 2.0 * ps[2] * pm[1]) -
                              std::max(0.0, ps[2] * pm[2]);
    out.norms.inf_term = std::min(0.0, bracket_lo) / (4.0 * eps * eps2);

    // 2 d_t sigma * mu - sigma * d_t mu = s'(t) * K(t, a) with
    // K = (2 p2s p1m - p1s p2m) + p2s p2m s(t) + (2 p2s p3m - p3s p2m) s(a).
    const double k0 = 2.0 * ps[1] * pm[0] - ps[0] * pm[1];
    const double k1 = ps[1] * pm[1];
    const double k2 = 2.0 * ps[1] * pm[2] - ps[2] * pm[1];
    const double k_lo = k0 + std::min(0.0, k1) + std::min(0.0, k2);
    const double k_hi = k0 + std::max(0.0, k1) + std::max(0.0, k2);
    if (ps[2] == 0.0) {
        out.sign_case = SignCase::a_sigma_zero;
        out.admissibility[1] = std::numeric_limits<double>::infinity();
    } else if (ps[2] > 0.0) {
        out.admissibility[1] = k_lo;
        if (k_lo >= 0.0) out.sign_case = SignCase::case_ii;
    } else {
        out.admissibility[1] = -k_hi;
        if (k_hi <= 0.0) out.sign_case = SignCase::case_iii;
    }
    if (out.sign_case == SignCase::unknown) {
        failures.push_back({"sigmoid_sign_case",
                            "time term 2*d_t sigma*mu - sigma*d_t mu has the wrong sign (margin " +
                                std::to_string(out.admissibility[1]) + ")"});
    }

    out.admissibility[2] =
        1.0 / (g_prime_sup * g_prime_sup) + 2.0 * std::min(0.0, out.norms.inf_term);
    if (!(out.admissibility[2] > 0.0)) {
        failures.push_back({"sigmoid_infimum_inequality",
                            "1/||g'||^2 + 2 min(0, inf_term) = " +
                                std::to_string(out.admissibility[2]) + " must be > 0"});
    }
    return {out, failures};
}

/// As sigmoid_norms_report, throwing ASSUMPTION_VIOLATED on the first failure.
inline SigmoidNorms sigmoid_norms(const SigmoidFamily& fam, double g_prime_sup) {
    auto [out, failures] = sigmoid_norms_report(fam, g_prime_sup);
    if (!failures.empty()) {
        throw Error(ErrorCode::assumption_violated,
                    failures.front().name + ": " + failures.front().detail);
    }
    return out;
}

/// Sigmoid coefficients with their closed-form norms. With checked = false the
/// field is built even when an admissibility inequality fails (its sign case
/// is then UNKNOWN where applicable); epsilon must still be positive.
inline CoefficientField sigmoid_field(const SigmoidFamily& fam, double g_prime_sup,
                                      bool checked = true) {
    SigmoidNorms sn;
    if (checked) {
        sn = sigmoid_norms(fam, g_prime_sup);
    } else {
        auto report = sigmoid_norms_report(fam, g_prime_sup);
        if (!(report.first.epsilon > 0.0)) {
            throw Error(ErrorCode::assumption_violated,
                        report.second.front().name + ": " + report.second.front().detail);
        }
        sn = report.first;
    }
    const auto ps = fam.p_sigma;
    const auto pm = fam.p_mu;
    using detail::logistic;
    using detail::logistic_prime;

    CoefficientField f;
    f.sigma = [ps](double t, double a) {
        return ps[0] + ps[1] * logistic(t) + ps[2] * logistic(a);
    };
    f.mu = [pm](double t, double a) { return pm[0] + pm[1] * logistic(t) + pm[2] * logistic(a); };
    f.d_t_sigma = [ps](double t, double) { return ps[1] * logistic_prime(t); };
    f.d_a_sigma = [ps](double, double a) { return ps[2] * logistic_prime(a); };
    f.d_t_mu = [pm](double t, double) { return pm[1] * logistic_prime(t); };
    f.d_a_mu = [pm](double, double a) { return pm[2] * logistic_prime(a); };
    f.epsilon = sn.epsilon;
    f.norms = sn.norms;
    f.sign_case = sn.sign_case;
    f.time_homogeneous = ps[1] == 0.0 && pm[1] == 0.0;
    return f;
}

// ---------------------------------------------------------------------------
// Grid estimation
// ---------------------------------------------------------------------------

struct GridBox {
    double t_lo = 0.0;
    double t_hi = 1.0;
    double a_lo = -10.0;
    double a_hi = 10.0;
};

struct GridResolution {
    int n_t = 200;
    int n_a = 200;
};

struct GridNorms {
    CoefficientNorms norms;
    double sigma_inf = 0.0;
    SignCase sign_case = SignCase::unknown;
    std::optional<GridPoint> sign_witness;
};

/// Sup / inf estimates on a rectangular grid. Flagged GRID_ESTIMATED.
inline GridNorms estimate_norms_grid(const CoefficientField& field, const GridBox& box,
                                     const GridResolution& res) {
    if (res.n_t < 2 || res.n_a < 2) {
        throw Error(ErrorCode::config, "grid resolution must be at least 2 per axis");
    }
    if (!(box.t_hi >= box.t_lo) || !(box.a_hi >= box.a_lo) || box.t_lo < 0.0) {
        throw Error(ErrorCode::config, "grid box must be nonempty with t >= 0");
    }

    GridNorms out;
    auto& n = out.norms;
    n.provenance = NormProvenance::grid_estimated;
    n.inf_term = std::numeric_limits<double>::infinity();
    out.sigma_inf = std::numeric_limits<double>::infinity();

    bool da_sigma_zero = true;
    bool case_ii = true;
    bool case_iii = true;
    std::optional<GridPoint> ii_witness, iii_witness;

    for (int i = 0; i < res.n_t; ++i) {
        const double t = box.t_lo + (box.t_hi - box.t_lo) * i / (res.n_t - 1);
        for (int j = 0; j < res.n_a; ++j) {
            const double a = box.a_lo + (box.a_hi - box.a_lo) * j / (res.n_a - 1);
            const double s = field.sigma(t, a);
            const double m = field.mu(t, a);
            const double st = field.d_t_sigma(t, a);
            const double sa = field.d_a_sigma(t, a);
            const double mt = field.d_t_mu(t, a);
            const double ma = field.d_a_mu(t, a);
            for (double v : {s, m, st, sa, mt, ma}) {
                if (!std::isfinite(v)) {
                    throw Error(ErrorCode::evaluation,
                                "non-finite coefficient value at " + format_point(t, a));
                }
            }
            if (!(s > 0.0)) {
                throw Error(ErrorCode::evaluation,
                            "sigma must be positive on the grid, got " + std::to_string(s) +
                                " at " + format_point(t, a));
            }
            const double s2 = s * s;
            out.sigma_inf = std::min(out.sigma_inf, s);
            n.sigma_sup = std::max(n.sigma_sup, std::fabs(s));
            n.mu_over_sigma2 = std::max(n.mu_over_sigma2, std::fabs(m) / s2);
            n.dt_mu_over_sigma2 = std::max(n.dt_mu_over_sigma2, std::fabs(mt) / s2);
            n.da_mu_over_sigma2 = std::max(n.da_mu_over_sigma2, std::fabs(ma) / s2);
            n.dt_sigma_over_sigma = std::max(n.dt_sigma_over_sigma, std::fabs(st) / s);
            n.da_sigma_over_sigma = std::max(n.da_sigma_over_sigma, std::fabs(sa) / s);
            const double term = (s * ma - 2.0 * sa * m) / (s2 * s);
            if (term < n.inf_term) {
                n.inf_term = term;
                n.inf_witness = GridPoint{t, a};
            }

            const double time_term = 2.0 * st * m - s * mt;
            if (sa != 0.0) da_sigma_zero = false;
            if (case_ii && (sa < 0.0 || time_term < 0.0)) {
                case_ii = false;
                ii_witness = GridPoint{t, a};
            }
            if (case_iii && (sa > 0.0 || time_term > 0.0)) {
                case_iii = false;
                iii_witness = GridPoint{t, a};
            }
        }
    }

    if (da_sigma_zero) {
        out.sign_case = SignCase::a_sigma_zero;
    } else if (case_ii) {
        out.sign_case = SignCase::case_ii;
    } else if (case_iii) {
        out.sign_case = SignCase::case_iii;
    } else {
        out.sign_case = SignCase::unknown;
        out.sign_witness = ii_witness ? ii_witness : iii_witness;
    }
    return out;
}

/// Replace a field's norms by grid estimates (advisory provenance).
inline CoefficientField with_grid_norms(CoefficientField field, const GridBox& box,
                                        const GridResolution& res) {
    const GridNorms g = estimate_norms_grid(field, box, res);
    field.norms = g.norms;
    field.sign_case = g.sign_case;
    return field;
}

// ---------------------------------------------------------------------------
// Target law and the quantile transform g = F^-1 o Phi
// ---------------------------------------------------------------------------

using RealFunction = std::function<double(double)>;

/// A target law before the transform is attached.
struct LawSpec {
    std::string name;
    RealFunction cdf;
    RealFunction quantile;
    /// Density of the law; when present g' is computed analytically.
    RealFunction density;
    /// Closed form of quantile(Phi(x)) when one exists with better tail accuracy.
    RealFunction transform;
    std::optional<double> g_prime_sup;
    std::optional<double> inv_g_prime_sup;
    std::optional<double> normal_std;
};

struct TargetLaw {
    std::string name;
    RealFunction cdf;
    RealFunction quantile;
    RealFunction g;
    RealFunction g_prime;
    double g_prime_sup = 0.0;
    /// ||1/g'||; required in strong mode, never guessed.
    std::optional<double> inv_g_prime_sup;
    bool g_prime_analytic = false;
    NormProvenance g_prime_provenance = NormProvenance::declared;
    std::optional<double> normal_std;

    [[nodiscard]] bool is_normal() const noexcept { return normal_std.has_value(); }
};

inline constexpr double kFiniteDifferenceStep = 1e-5;

/// Builds g = quantile o Phi and g'. g' is analytic, phi(x) / density(g(x)),
/// when the law has a density, otherwise a central difference with step 1e-5
/// clamped to [0, ||g'||].
inline TargetLaw make_quantile_transform(const LawSpec& spec) {
    if (!spec.quantile || !spec.cdf) {
        throw Error(ErrorCode::config, "target law '" + spec.name + "' needs cdf and quantile");
    }
    {
        double prev = -std::numeric_limits<double>::infinity();
        for (int k = 1; k < 1000; ++k) {
            const double q = spec.quantile(k / 1000.0);
            if (std::isnan(q) || q < prev) {
                throw Error(ErrorCode::config, "quantile of '" + spec.name +
                                                   "' is not monotone near p = " +
                                                   std::to_string(k / 1000.0));
            }
            prev = q;
        }
    }

    TargetLaw law;
    law.name = spec.name;
    law.cdf = spec.cdf;
    law.quantile = spec.quantile;
    law.normal_std = spec.normal_std;
    law.inv_g_prime_sup = spec.inv_g_prime_sup;
    if (spec.transform) {
        law.g = spec.transform;
    } else {
        law.g = [q = spec.quantile](double x) { return q(normal::cdf(x)); };
    }

    const auto g = law.g;
    const auto fd = [g](double x) {
        const double h = kFiniteDifferenceStep;
        return (g(x + h) - g(x - h)) / (2.0 * h);
    };

    RealFunction raw_prime;
    if (spec.density) {
        law.g_prime_analytic = true;
        raw_prime = [g, dens = spec.density](double x) {
            const double d = dens(g(x));
            if (!(d > 0.0)) return std::numeric_limits<double>::infinity();
            return normal::pdf(x) / d;
        };
    } else {
        raw_prime = fd;
    }

    if (spec.g_prime_sup) {
        law.g_prime_sup = *spec.g_prime_sup;
        law.g_prime_provenance = NormProvenance::declared;
    } else {
        double sup = 0.0;
        for (int k = 0; k <= 1600; ++k) {
            const double x = -8.0 + 0.01 * k;
            const double v = raw_prime(x);
            if (std::isfinite(v)) sup = std::max(sup, v);
        }
        law.g_prime_sup = sup;
        law.g_prime_provenance = NormProvenance::grid_estimated;
    }
    if (!(law.g_prime_sup > 0.0) || !std::isfinite(law.g_prime_sup)) {
        throw Error(ErrorCode::config, "||g'|| of '" + spec.name + "' must be finite and positive");
    }

    if (law.g_prime_analytic) {
        law.g_prime = raw_prime;
    } else {
        law.g_prime = [raw_prime, sup = law.g_prime_sup](double x) {
            return std::clamp(raw_prime(x), 0.0, sup);
        };
    }
    return law;
}

/// N(0, std^2): g(x) = std * x, ||g'|| = std, ||1/g'|| = 1/std.
inline TargetLaw normal_law(double std_dev) {
    if (!(std_dev > 0.0)) throw Error(ErrorCode::config, "normal target needs std > 0");
    LawSpec s;
    s.name = "normal";
    s.cdf = [std_dev](double x) { return normal::cdf(x / std_dev); };
    s.quantile = [std_dev](double p) { return std_dev * normal::quantile(p); };
    s.density = [std_dev](double x) { return normal::pdf(x / std_dev) / std_dev; };
    s.transform = [std_dev](double x) { return std_dev * x; };
    s.g_prime_sup = std_dev;
    s.inv_g_prime_sup = 1.0 / std_dev;
    s.normal_std = std_dev;
    return make_quantile_transform(s);
}

/// Exp(rate). g' grows without bound, so the reported sup is a grid estimate.
inline TargetLaw exponential_law(double rate) {
    if (!(rate > 0.0)) throw Error(ErrorCode::config, "exponential target needs rate > 0");
    LawSpec s;
    s.name = "exponential";
    s.cdf = [rate](double x) { return x <= 0.0 ? 0.0 : -std::expm1(-rate * x); };
    s.quantile = [rate](double p) { return -std::log1p(-p) / rate; };
    s.density = [rate](double x) { return x < 0.0 ? 0.0 : rate * std::exp(-rate * x); };
    s.transform = [rate](double x) { return -std::log(normal::sf(x)) / rate; };
    return make_quantile_transform(s);
}

/// Law given by a quantile table (p_k, x_k), linearly interpolated; the
/// endpoints carry the remaining mass as atoms.
inline TargetLaw tabulated_law(std::vector<double> ps, std::vector<double> xs,
                               std::optional<double> g_prime_sup = std::nullopt,
                               std::optional<double> inv_g_prime_sup = std::nullopt) {
    if (ps.size() != xs.size() || ps.size() < 2) {
        throw Error(ErrorCode::config, "quantile table needs at least two (p, x) pairs");
    }
    for (std::size_t k = 0; k < ps.size(); ++k) {
        if (!(ps[k] > 0.0 && ps[k] < 1.0) || !std::isfinite(xs[k])) {
            throw Error(ErrorCode::config, "quantile table probabilities must lie in (0, 1)");
        }
        if (k > 0 && !(ps[k] > ps[k - 1])) {
            throw Error(ErrorCode::config, "quantile table probabilities must increase strictly");
        }
        if (k > 0 && xs[k] < xs[k - 1]) {
            throw Error(ErrorCode::config, "quantile table values are not monotone");
        }
    }
    LawSpec s;
    s.name = "quantile_table";
    s.quantile = [ps, xs](double p) {
        if (p <= ps.front()) return xs.front();
        if (p >= ps.back()) return xs.back();
        const auto it = std::upper_bound(ps.begin(), ps.end(), p);
        const std::size_t k = static_cast<std::size_t>(it - ps.begin());
        const double w = (p - ps[k - 1]) / (ps[k] - ps[k - 1]);
        return xs[k - 1] + w * (xs[k] - xs[k - 1]);
    };
    s.cdf = [ps, xs](double x) {
        if (x < xs.front()) return 0.0;
        if (x >= xs.back()) return 1.0;
        // Largest k with xs[k] <= x; flat stretches resolve to their top probability.
        const auto it = std::upper_bound(xs.begin(), xs.end(), x);
        const std::size_t k = static_cast<std::size_t>(it - xs.begin());
        const double w = (x - xs[k - 1]) / (xs[k] - xs[k - 1]);
        return ps[k - 1] + w * (ps[k] - ps[k - 1]);
    };
    s.g_prime_sup = g_prime_sup;
    s.inv_g_prime_sup = inv_g_prime_sup;
    return make_quantile_transform(s);
}

}  // namespace sep
