#pragma once

#include "sep/error.hpp"
#include "sep/model.hpp"

#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace sep {

/// Which structural case holds; mirrors SignCase without the UNKNOWN state.
enum class AssumptionCase { I, II, III };

inline std::string_view to_string(AssumptionCase c) noexcept {
    switch (c) {
    case AssumptionCase::I: return "I";
    case AssumptionCase::II: return "II";
    case AssumptionCase::III: return "III";
    }
    return "?";
}

struct FailedCheck {
    std::string name;
    std::string detail;
    std::optional<GridPoint> witness;
};

struct AssumptionReport {
    bool holds = false;
    std::optional<AssumptionCase> assumption_case;
    std::vector<FailedCheck> failed_checks;
    double inf_term = 0.0;
    NormProvenance provenance = NormProvenance::declared;
};

/// Naming of the lower Z bound convention written into every report.
inline constexpr std::string_view kZCheckConvention = "lemma_6_6";

/// A-priori bounds on Z and on the stopping time. When the lower bound is
/// unavailable (weak mode without ||1/g'||) z_check and tau_lo are zero and
/// has_lower is false.
struct ZBounds {
    double z_hat = 0.0;
    double z_check = 0.0;
    double u2_norm_bound = 0.0;
    double tau_lo = 0.0;
    double tau_hi = 0.0;
    bool has_lower = true;
    bool advisory = false;
};

/// Checks ellipticity, finiteness of the ratio norms and ||g'||, the infimum
/// inequality inf_term > -1 / (2 ||g'||^2) and the sign case. Failures are
/// reported, never thrown.
inline AssumptionReport check_assumptions(const CoefficientField& field, const TargetLaw& law) {
    AssumptionReport rep;
    const auto& n = field.norms;
    rep.inf_term = n.inf_term;
    rep.provenance = (n.provenance == NormProvenance::grid_estimated ||
                      law.g_prime_provenance == NormProvenance::grid_estimated)
                         ? NormProvenance::grid_estimated
                         : NormProvenance::declared;
    const bool estimated = n.provenance == NormProvenance::grid_estimated;

    if (!(field.epsilon > 0.0) || !std::isfinite(field.epsilon)) {
        rep.failed_checks.push_back(
            {"ellipticity", "epsilon = " + std::to_string(field.epsilon) + " must be > 0", {}});
    }

    const std::pair<const char*, double> ratio_norms[] = {
        {"sigma_sup", n.sigma_sup},
        {"mu_over_sigma2", n.mu_over_sigma2},
        {"dt_mu_over_sigma2", n.dt_mu_over_sigma2},
        {"da_mu_over_sigma2", n.da_mu_over_sigma2},
        {"dt_sigma_over_sigma", n.dt_sigma_over_sigma},
        {"da_sigma_over_sigma", n.da_sigma_over_sigma},
        {"g_prime_sup", law.g_prime_sup},
    };
    for (const auto& [name, value] : ratio_norms) {
        if (!std::isfinite(value) || value < 0.0) {
            rep.failed_checks.push_back({std::string("bounded_") + name,
                                         std::string(name) + " = " + std::to_string(value) +
                                             " is not a finite nonnegative bound",
                                         {}});
        }
    }
    if (field.norms.sigma_sup < field.epsilon) {
        rep.failed_checks.push_back({"sigma_sup_ge_epsilon", "||sigma|| below epsilon", {}});
    }

    const double threshold = -1.0 / (2.0 * law.g_prime_sup * law.g_prime_sup);
    if (!(n.inf_term > threshold)) {
        rep.failed_checks.push_back(
            {"infimum_inequality",
             "inf_term = " + std::to_string(n.inf_term) + " must exceed -1/(2||g'||^2) = " +
                 std::to_string(threshold),
             estimated ? n.inf_witness : std::nullopt});
    }

    switch (field.sign_case) {
    case SignCase::a_sigma_zero: rep.assumption_case = AssumptionCase::I; break;
    case SignCase::case_ii: rep.assumption_case = AssumptionCase::II; break;
    case SignCase::case_iii: rep.assumption_case = AssumptionCase::III; break;
    case SignCase::unknown:
        rep.failed_checks.push_back(
            {"sign_case",
             "none of: d_a sigma == 0; d_a sigma >= 0 and 2 d_t sigma mu - sigma d_t mu >= 0; "
             "d_a sigma <= 0 and 2 d_t sigma mu - sigma d_t mu <= 0",
             {}});
        break;
    }

    rep.holds = rep.failed_checks.empty();
    return rep;
}

/// Upper bound on Z: (1/||g'||^2 + 2 min(0, inf_term))^(-1/2).
inline double z_upper_from(double inf_term, double g_prime_sup) {
    const double arg = 1.0 / (g_prime_sup * g_prime_sup) + 2.0 * std::min(0.0, inf_term);
    if (!(arg > 0.0) || !std::isfinite(arg)) {
        throw Error(ErrorCode::assumption_violated,
                    "1/||g'||^2 + 2 min(0, inf_term) = " + std::to_string(arg) + " is not positive");
    }
    return 1.0 / std::sqrt(arg);
}

inline double compute_z_upper(const AssumptionReport& report, const TargetLaw& law) {
    return z_upper_from(report.inf_term, law.g_prime_sup);
}

/// Bound on the sup of the x2-gradient of the decoupling field. Vanishes when
/// the coefficients do not depend on time.
inline double compute_u2_bound(double z_hat, const CoefficientNorms& n, double epsilon) {
    const double z2 = z_hat * z_hat;
    const double growth =
        n.da_mu_over_sigma2 +
        2.0 * (n.da_sigma_over_sigma * n.mu_over_sigma2 +
               n.dt_sigma_over_sigma / (epsilon * epsilon));
    const double source = 2.0 * n.dt_sigma_over_sigma * n.mu_over_sigma2 + n.dt_mu_over_sigma2;
    return std::exp(z2 * growth) * z2 * source;
}

inline double compute_u2_bound(double z_hat, const CoefficientField& field) {
    return compute_u2_bound(z_hat, field.norms, field.epsilon);
}

/// The bracket multiplying z_hat in the lower bound.
inline double z_lower_bracket(double u2_bound, const CoefficientNorms& n, double epsilon) {
    return n.da_mu_over_sigma2 + 2.0 * n.mu_over_sigma2 * n.da_sigma_over_sigma +
           2.0 / (epsilon * epsilon) * u2_bound * n.da_sigma_over_sigma;
}

/// Lower bound on Z: (||1/g'|| + z_hat * bracket)^-1, with z_hat standing in for
/// the sup of the x1-gradient inside the bracket.
inline double z_lower_from(double inv_g_prime_sup, double z_hat, double bracket) {
    return 1.0 / (inv_g_prime_sup + z_hat * bracket);
}

inline double compute_z_lower(double z_hat, double u2_bound, const CoefficientField& field,
                              const TargetLaw& law) {
    if (!law.inv_g_prime_sup) {
        throw Error(ErrorCode::mode_error,
                    "||1/g'|| is not available for '" + law.name + "'; only weak mode can run");
    }
    const double z = z_lower_from(*law.inv_g_prime_sup, z_hat,
                                  z_lower_bracket(u2_bound, field.norms, field.epsilon));
    if (!(z > 0.0)) {
        throw Error(ErrorCode::assumption_violated,
                    "lower Z bound is not positive (u2 bound = " + std::to_string(u2_bound) + ")");
    }
    return z;
}

struct TauBounds {
    double lo = 0.0;
    double hi = 0.0;
};

inline TauBounds compute_tau_bounds(double z_hat, double z_check, double sigma_sup, double epsilon) {
    return {z_check * z_check / (sigma_sup * sigma_sup), z_hat * z_hat / (epsilon * epsilon)};
}

/// All a-priori constants for a field and a law. Throws MODE_ERROR when the
/// lower bound is required but ||1/g'|| is unknown.
inline ZBounds compute_bounds(const CoefficientField& field, const TargetLaw& law,
                              const AssumptionReport& report, bool require_lower = true) {
    ZBounds zb;
    zb.z_hat = compute_z_upper(report, law);
    zb.u2_norm_bound = compute_u2_bound(zb.z_hat, field);
    if (law.inv_g_prime_sup) {
        zb.z_check = compute_z_lower(zb.z_hat, zb.u2_norm_bound, field, law);
    } else if (require_lower) {
        (void)compute_z_lower(zb.z_hat, zb.u2_norm_bound, field, law);
    } else {
        zb.has_lower = false;
        zb.z_check = 0.0;
    }
    const auto tb = compute_tau_bounds(zb.z_hat, zb.z_check, field.norms.sigma_sup, field.epsilon);
    zb.tau_lo = tb.lo;
    zb.tau_hi = tb.hi;
    zb.advisory = report.provenance == NormProvenance::grid_estimated;
    return zb;
}

}  // namespace sep
