#pragma once

#include "sep/analysis.hpp"
#include "sep/error.hpp"
#include "sep/model.hpp"
#include "sep/parallel.hpp"
#include "sep/paths.hpp"
#include "sep/solver.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

namespace sep {

/// Euler-Maruyama for dA = mu(t, A) dt + sigma(t, A) dB on [0, tau] with
/// uniform substeps, pulling B from (and refining) the given store.
inline double simulate_sde(double a0, const CoefficientField& field, PathStore& store, double tau,
                           int n_sub) {
    if (!(tau > 0.0) || !std::isfinite(tau)) {
        throw Error(ErrorCode::domain, "simulate_sde needs tau > 0, got " + std::to_string(tau));
    }
    if (n_sub < 1) throw Error(ErrorCode::domain, "simulate_sde needs at least one substep");
    const double h = tau / n_sub;
    double a = a0;
    double t = 0.0;
    double b_prev = store.sample_at(0.0);
    for (int j = 0; j < n_sub; ++j) {
        // The last node is tau itself, not the accumulated j * h.
        const double t_next = (j + 1 == n_sub) ? tau : (j + 1) * h;
        const double b_next = store.sample_at(t_next);
        a += field.mu_at(t, a) * (t_next - t) + field.sigma_at(t, a) * (b_next - b_prev);
        b_prev = b_next;
        t = t_next;
    }
    return a;
}

struct KsResult {
    double statistic = 0.0;
    double p_value = 1.0;
};

/// Survival function of the Kolmogorov distribution, P(K > lambda).
inline double kolmogorov_sf(double lambda) {
    if (!(lambda > 0.0)) return 1.0;
    if (lambda < 1.0) {
        // Small-lambda form: 1 - sqrt(2 pi) / lambda * sum exp(-(2k-1)^2 pi^2 / (8 lambda^2)).
        const double c = std::sqrt(2.0 * std::numbers::pi) / lambda;
        const double q = std::numbers::pi * std::numbers::pi / (8.0 * lambda * lambda);
        double sum = 0.0;
        for (int k = 1; k < 100; ++k) {
            const double term = std::exp(-(2.0 * k - 1.0) * (2.0 * k - 1.0) * q);
            sum += term;
            if (term < 1e-10 * sum || term < 1e-300) break;
        }
        return std::clamp(1.0 - c * sum, 0.0, 1.0);
    }
    double sum = 0.0;
    double sign = 1.0;
    for (int k = 1; k < 100; ++k) {
        const double term = std::exp(-2.0 * k * k * lambda * lambda);
        sum += sign * term;
        if (term < 1e-10) break;
        sign = -sign;
    }
    return std::clamp(2.0 * sum, 0.0, 1.0);
}

/// Two-sided one-sample Kolmogorov-Smirnov test with the asymptotic p-value
/// at sqrt(n) * D.
inline KsResult ks_test(std::span<const double> samples, const std::function<double(double)>& cdf) {
    if (samples.empty()) throw Error(ErrorCode::sample_too_small, "KS test needs samples");
    std::vector<double> x(samples.begin(), samples.end());
    std::sort(x.begin(), x.end());
    const double n = static_cast<double>(x.size());
    double d = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double f = cdf(x[i]);
        const double above = static_cast<double>(i + 1) / n - f;
        const double below = f - static_cast<double>(i) / n;
        d = std::max({d, above, below});
    }
    return {d, kolmogorov_sf(std::sqrt(n) * d)};
}

struct NormalityResult {
    double k2 = 0.0;
    double p_value = 1.0;
    double z_skewness = 0.0;
    double z_kurtosis = 0.0;
};

/// D'Agostino-Pearson omnibus K^2 = Z(skewness)^2 + Z(kurtosis)^2 with the
/// D'Agostino (1970) skewness and Anscombe-Glynn kurtosis transforms;
/// p-value from chi-square with 2 degrees of freedom.
inline NormalityResult dagostino_pearson(std::span<const double> samples) {
    const std::size_t size = samples.size();
    if (size < 20) {
        throw Error(ErrorCode::sample_too_small,
                    "normality test needs at least 20 samples, got " + std::to_string(size));
    }
    const double n = static_cast<double>(size);
    double mean = 0.0;
    for (double v : samples) mean += v;
    mean /= n;
    double m2 = 0.0, m3 = 0.0, m4 = 0.0;
    for (double v : samples) {
        const double d = v - mean;
        const double d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    if (!(m2 > 0.0)) throw Error(ErrorCode::domain, "normality test on a constant sample");
    const double b1 = m3 / std::pow(m2, 1.5);
    const double b2 = m4 / (m2 * m2);

    NormalityResult out;
    {
        double y = b1 * std::sqrt((n + 1.0) * (n + 3.0) / (6.0 * (n - 2.0)));
        const double beta2 = 3.0 * (n * n + 27.0 * n - 70.0) * (n + 1.0) * (n + 3.0) /
                             ((n - 2.0) * (n + 5.0) * (n + 7.0) * (n + 9.0));
        const double w2 = -1.0 + std::sqrt(2.0 * (beta2 - 1.0));
        const double delta = 1.0 / std::sqrt(0.5 * std::log(w2));
        const double alpha = std::sqrt(2.0 / (w2 - 1.0));
        if (y == 0.0) y = 1.0;
        const double ya = y / alpha;
        out.z_skewness = b1 == 0.0 ? 0.0 : delta * std::log(ya + std::sqrt(ya * ya + 1.0));
    }
    {
        const double e = 3.0 * (n - 1.0) / (n + 1.0);
        const double var_b2 = 24.0 * n * (n - 2.0) * (n - 3.0) /
                              ((n + 1.0) * (n + 1.0) * (n + 3.0) * (n + 5.0));
        const double x = (b2 - e) / std::sqrt(var_b2);
        const double sqrt_beta1 = 6.0 * (n * n - 5.0 * n + 2.0) / ((n + 7.0) * (n + 9.0)) *
                                  std::sqrt(6.0 * (n + 3.0) * (n + 5.0) / (n * (n - 2.0) * (n - 3.0)));
        const double a = 6.0 + 8.0 / sqrt_beta1 *
                                   (2.0 / sqrt_beta1 + std::sqrt(1.0 + 4.0 / (sqrt_beta1 * sqrt_beta1)));
        const double term1 = 1.0 - 2.0 / (9.0 * a);
        const double denom = 1.0 + x * std::sqrt(2.0 / (a - 4.0));
        const double term2 = denom == 0.0
                                 ? 0.0
                                 : std::copysign(std::cbrt((1.0 - 2.0 / a) / std::fabs(denom)), denom);
        out.z_kurtosis = (term1 - term2) / std::sqrt(2.0 / (9.0 * a));
    }
    out.k2 = out.z_skewness * out.z_skewness + out.z_kurtosis * out.z_kurtosis;
    out.p_value = std::exp(-0.5 * out.k2);
    return out;
}

struct TauViolation {
    std::size_t path = 0;
    double tau = 0.0;
};

struct TauCheck {
    bool ok = true;
    std::vector<TauViolation> violations;
};

/// Every tau must lie in [tau_lo, tau_hi] up to a relative slack of 1e-12.
inline TauCheck check_tau_bounds(std::span<const double> tau, const ZBounds& zb) {
    TauCheck out;
    const double lo = zb.tau_lo * (1.0 - kBoundSlack);
    const double hi = zb.tau_hi * (1.0 + kBoundSlack);
    for (std::size_t p = 0; p < tau.size(); ++p) {
        if (!(tau[p] >= lo && tau[p] <= hi)) out.violations.push_back({p, tau[p]});
    }
    out.ok = out.violations.empty();
    return out;
}

/// Counts on half-open bins [e_j, e_{j+1}); the last bin is closed. Samples
/// outside [e_0, e_last] go to underflow / overflow.
struct Histogram {
    std::vector<double> bin_edges;
    std::vector<std::uint64_t> counts;
    std::uint64_t underflow = 0;
    std::uint64_t overflow = 0;

    [[nodiscard]] std::uint64_t total() const noexcept {
        std::uint64_t s = underflow + overflow;
        for (auto c : counts) s += c;
        return s;
    }
};

inline Histogram build_histogram(std::span<const double> samples, std::vector<double> edges) {
    if (edges.size() < 2) throw Error(ErrorCode::domain, "histogram needs at least two edges");
    for (std::size_t k = 1; k < edges.size(); ++k) {
        if (!(edges[k] > edges[k - 1])) {
            throw Error(ErrorCode::domain, "histogram edges must increase strictly");
        }
    }
    Histogram h;
    h.bin_edges = std::move(edges);
    h.counts.assign(h.bin_edges.size() - 1, 0);
    for (double v : samples) {
        if (v < h.bin_edges.front()) {
            ++h.underflow;
        } else if (v > h.bin_edges.back()) {
            ++h.overflow;
        } else if (v == h.bin_edges.back()) {
            ++h.counts.back();
        } else {
            const auto it = std::upper_bound(h.bin_edges.begin(), h.bin_edges.end(), v);
            ++h.counts[static_cast<std::size_t>(it - h.bin_edges.begin()) - 1];
        }
    }
    return h;
}

/// n_bins equal bins spanning [lo, hi].
inline Histogram build_histogram(std::span<const double> samples, int n_bins, double lo, double hi) {
    if (n_bins < 1 || !(hi > lo)) throw Error(ErrorCode::domain, "invalid histogram range");
    std::vector<double> edges(static_cast<std::size_t>(n_bins) + 1);
    for (int k = 0; k <= n_bins; ++k) edges[static_cast<std::size_t>(k)] = lo + (hi - lo) * k / n_bins;
    edges.back() = hi;
    return build_histogram(samples, std::move(edges));
}

/// n_bins equal bins spanning the sample range.
inline Histogram build_histogram(std::span<const double> samples, int n_bins) {
    if (samples.empty()) throw Error(ErrorCode::domain, "histogram needs samples");
    const auto [mn, mx] = std::minmax_element(samples.begin(), samples.end());
    double lo = *mn;
    double hi = *mx;
    if (!(hi > lo)) {
        lo -= 0.5;
        hi += 0.5;
    }
    return build_histogram(samples, n_bins, lo, hi);
}

struct TauStats {
    double min = 0.0;
    double mean = 0.0;
    double max = 0.0;
    Histogram histogram;
};

struct EmbeddingReport {
    double y0 = 0.0;
    TauStats tau_stats;
    std::vector<double> a_tau_samples;
    Histogram a_tau_histogram;
    double ks_statistic = 0.0;
    double ks_p_value = 1.0;
    std::optional<double> normality_p_value;
    std::optional<double> normality_k2;
    bool tau_bounds_respected = true;
    std::vector<TauViolation> tau_violations;
    int n_sub = 200;
};

struct VerifyOptions {
    int n_sub = 200;
    int hist_bins = 50;
    unsigned workers = 1;
};

/// Runs A from y0 along every path's own B up to that path's tau and tests
/// the terminal values against the target law.
inline EmbeddingReport verify_embedding(double y0, std::span<const double> tau,
                                        std::span<PathStore> stores, const CoefficientField& field,
                                        const TargetLaw& law, const ZBounds& zb,
                                        const VerifyOptions& opt = {}) {
    if (tau.size() != stores.size() || tau.empty()) {
        throw Error(ErrorCode::domain, "verification needs one stopping time per path store");
    }
    EmbeddingReport rep;
    rep.y0 = y0;
    rep.n_sub = opt.n_sub;
    rep.a_tau_samples.resize(tau.size());
    parallel_for(tau.size(), opt.workers, [&](std::size_t b, std::size_t e) {
        for (std::size_t p = b; p < e; ++p) {
            rep.a_tau_samples[p] = simulate_sde(y0, field, stores[p], tau[p], opt.n_sub);
        }
    });

    const auto [mn, mx] = std::minmax_element(tau.begin(), tau.end());
    double sum = 0.0;
    for (double t : tau) sum += t;
    rep.tau_stats.min = *mn;
    rep.tau_stats.max = *mx;
    rep.tau_stats.mean = sum / static_cast<double>(tau.size());
    rep.tau_stats.histogram = build_histogram(tau, opt.hist_bins);
    rep.a_tau_histogram = build_histogram(rep.a_tau_samples, opt.hist_bins);

    const auto ks = ks_test(rep.a_tau_samples, law.cdf);
    rep.ks_statistic = ks.statistic;
    rep.ks_p_value = ks.p_value;
    if (law.is_normal() && rep.a_tau_samples.size() >= 20) {
        const auto dp = dagostino_pearson(rep.a_tau_samples);
        rep.normality_p_value = dp.p_value;
        rep.normality_k2 = dp.k2;
    }
    const auto tc = check_tau_bounds(tau, zb);
    rep.tau_bounds_respected = tc.ok;
    rep.tau_violations = tc.violations;
    return rep;
}

}  // namespace sep
