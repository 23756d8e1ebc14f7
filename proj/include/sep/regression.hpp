#pragma once

#include "sep/error.hpp"
#include "sep/parallel.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <vector>

namespace sep {

/// Total-degree polynomial basis in `dimension` regressors.
struct BasisSpec {
    int dimension = 3;
    int degree = 2;
    /// Penalty on the non-constant coefficients, in standardized coordinates.
    double ridge = 1e-8;

    [[nodiscard]] std::size_t size() const noexcept {
        // C(dimension + degree, degree)
        std::size_t c = 1;
        for (int k = 1; k <= degree; ++k) {
            c = c * static_cast<std::size_t>(dimension + k) / static_cast<std::size_t>(k);
        }
        return c;
    }
};

using Exponents = std::vector<int>;

namespace detail {

inline void exponents_of_degree(int dim, int remaining, std::size_t pos, Exponents& cur,
                                std::vector<Exponents>& out) {
    if (pos + 1 == static_cast<std::size_t>(dim)) {
        cur[pos] = remaining;
        out.push_back(cur);
        return;
    }
    for (int e = remaining; e >= 0; --e) {
        cur[pos] = e;
        exponents_of_degree(dim, remaining - e, pos + 1, cur, out);
    }
    cur[pos] = 0;
}

}  // namespace detail

/// Monomial exponents in graded-lexicographic order; the first is the constant.
inline std::vector<Exponents> monomial_exponents(int dimension, int degree) {
    std::vector<Exponents> out;
    Exponents cur(static_cast<std::size_t>(dimension), 0);
    for (int d = 0; d <= degree; ++d) detail::exponents_of_degree(dimension, d, 0, cur, out);
    return out;
}

/// Affine map x -> (x - mean) / scale applied per coordinate.
struct Standardizer {
    Eigen::VectorXd mean;
    Eigen::VectorXd scale;
};

inline Standardizer fit_standardizer(const Eigen::MatrixXd& states) {
    const Eigen::Index m = states.rows();
    Standardizer s;
    s.mean = states.colwise().mean().transpose();
    s.scale = Eigen::VectorXd::Ones(states.cols());
    for (Eigen::Index j = 0; j < states.cols(); ++j) {
        const double var =
            m > 1 ? (states.col(j).array() - s.mean(j)).square().sum() / static_cast<double>(m) : 0.0;
        const double sd = std::sqrt(var);
        // Spread at round-off level of the mean counts as zero variance.
        if (sd > 1e-10 * std::max(1e-300, std::fabs(s.mean(j)))) s.scale(j) = sd;
    }
    return s;
}

struct DesignMatrix {
    Eigen::MatrixXd matrix;
    Standardizer standardizer;
};

inline Eigen::MatrixXd expand_monomials(const BasisSpec& spec, const Eigen::MatrixXd& states,
                                        const Standardizer& st, unsigned workers = 1) {
    if (states.cols() != spec.dimension) {
        throw Error(ErrorCode::domain, "state dimension does not match basis dimension");
    }
    const auto exps = monomial_exponents(spec.dimension, spec.degree);
    const Eigen::Index m = states.rows();
    Eigen::MatrixXd d(m, static_cast<Eigen::Index>(exps.size()));
    parallel_for(static_cast<std::size_t>(m), workers, [&](std::size_t begin, std::size_t end) {
        std::vector<double> z(static_cast<std::size_t>(spec.dimension));
        for (std::size_t r = begin; r < end; ++r) {
            const auto row = static_cast<Eigen::Index>(r);
            for (int j = 0; j < spec.dimension; ++j) {
                const double x = states(row, j);
                if (!std::isfinite(x)) {
                    throw Error(ErrorCode::evaluation, "non-finite regressor in row " +
                                                           std::to_string(r));
                }
                z[static_cast<std::size_t>(j)] = (x - st.mean(j)) / st.scale(j);
            }
            for (std::size_t c = 0; c < exps.size(); ++c) {
                double v = 1.0;
                for (int j = 0; j < spec.dimension; ++j) {
                    for (int e = 0; e < exps[c][static_cast<std::size_t>(j)]; ++e) {
                        v *= z[static_cast<std::size_t>(j)];
                    }
                }
                d(row, static_cast<Eigen::Index>(c)) = v;
            }
        }
    });
    return d;
}

/// Standardizes the regressors and expands them into all monomials of total
/// degree <= spec.degree. Column 0 is the constant 1.
inline DesignMatrix design_matrix(const BasisSpec& spec, const Eigen::MatrixXd& states,
                                  unsigned workers = 1) {
    DesignMatrix out;
    out.standardizer = fit_standardizer(states);
    out.matrix = expand_monomials(spec, states, out.standardizer, workers);
    return out;
}

struct RegressionFit {
    Eigen::VectorXd coefficients;
    /// |R_00| / |R_rr| of the pivoted QR factor, r the numerical rank.
    double condition_estimate = 1.0;
    std::size_t sample_count = 0;
    Standardizer standardizer;
};

/// Minimizes |design * c - targets|^2 + ridge * |c[1:]|^2 with a
/// column-pivoted Householder QR of the ridge-augmented system. The constant
/// column (column 0) is never penalized, so residuals sum to zero.
inline RegressionFit fit_least_squares(const Eigen::MatrixXd& design, const Eigen::VectorXd& targets,
                                       double ridge) {
    const Eigen::Index m = design.rows();
    const Eigen::Index k = design.cols();
    if (targets.size() != m) throw Error(ErrorCode::domain, "design rows and targets differ");
    if (m < k) {
        throw Error(ErrorCode::insufficient_samples,
                    std::to_string(m) + " samples for " + std::to_string(k) + " basis functions");
    }
    if (ridge < 0.0) throw Error(ErrorCode::config, "ridge must be nonnegative");

    RegressionFit fit;
    fit.sample_count = static_cast<std::size_t>(m);

    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr;
    if (ridge > 0.0 && k > 1) {
        Eigen::MatrixXd aug = Eigen::MatrixXd::Zero(m + k - 1, k);
        aug.topRows(m) = design;
        const double root = std::sqrt(ridge);
        for (Eigen::Index j = 1; j < k; ++j) aug(m + j - 1, j) = root;
        Eigen::VectorXd rhs = Eigen::VectorXd::Zero(m + k - 1);
        rhs.head(m) = targets;
        qr.compute(aug);
        fit.coefficients = qr.solve(rhs);
    } else {
        qr.compute(design);
        fit.coefficients = qr.solve(targets);
    }

    // Re-center the intercept so the residual mean is zero to round-off.
    if (k > 0 && (design.col(0).array() == 1.0).all()) {
        fit.coefficients(0) += (targets - design * fit.coefficients).mean();
    }

    const auto rank = qr.rank();
    const auto& r = qr.matrixR();
    if (rank > 0) {
        fit.condition_estimate = std::fabs(r(0, 0)) / std::fabs(r(rank - 1, rank - 1));
    }
    return fit;
}

/// Fits on (states, targets) and returns the fit with its standardizer.
inline RegressionFit regress(const BasisSpec& spec, const Eigen::MatrixXd& states,
                             const Eigen::VectorXd& targets, unsigned workers = 1) {
    DesignMatrix dm = design_matrix(spec, states, workers);
    RegressionFit fit = fit_least_squares(dm.matrix, targets, spec.ridge);
    fit.standardizer = std::move(dm.standardizer);
    return fit;
}

inline Eigen::VectorXd predict(const BasisSpec& spec, const RegressionFit& fit,
                               const Eigen::MatrixXd& states, unsigned workers = 1) {
    return expand_monomials(spec, states, fit.standardizer, workers) * fit.coefficients;
}

/// In-sample least-squares projection of targets onto the basis evaluated at
/// the states, i.e. the fitted conditional expectation at each sample.
inline Eigen::VectorXd cond_expectation(const BasisSpec& spec, const Eigen::MatrixXd& states,
                                        const Eigen::VectorXd& targets, unsigned workers = 1) {
    const DesignMatrix dm = design_matrix(spec, states, workers);
    const RegressionFit fit = fit_least_squares(dm.matrix, targets, spec.ridge);
    return dm.matrix * fit.coefficients;
}

}  // namespace sep
