#pragma once

// Run configuration for the command-line pipeline. Requires nlohmann/json.

#include "sep/analysis.hpp"
#include "sep/error.hpp"
#include "sep/model.hpp"
#include "sep/solver.hpp"
#include "sep/verify.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

namespace sep {

using Json = nlohmann::ordered_json;

struct BmDriftModel {
    double m = 0.0;
};

struct SigmoidModel {
    SigmoidFamily family;
};

using ModelSpec = std::variant<BmDriftModel, SigmoidModel>;

struct NormalTarget {
    double std_dev = 1.0;
};

struct ExponentialTarget {
    double rate = 1.0;
};

struct QuantileTableTarget {
    std::vector<double> p;
    std::vector<double> x;
    std::optional<double> g_prime_sup;
    std::optional<double> inv_g_prime_sup;
};

using TargetSpec = std::variant<NormalTarget, ExponentialTarget, QuantileTableTarget>;

struct GridEstimateSpec {
    GridBox box;
    GridResolution resolution;
};

/// Norms supplied by the user in place of the model's own declarations.
struct DeclaredNormsSpec {
    CoefficientNorms norms;
    std::optional<double> epsilon;
    std::optional<SignCase> sign_case;
};

struct VerifySpec {
    double p_min = 0.01;
    int n_sub = 200;
    int hist_bins = 50;
};

struct RunConfig {
    ModelSpec model;
    TargetSpec target;
    SolverConfig numerics;
    std::optional<GridEstimateSpec> estimate;
    std::optional<DeclaredNormsSpec> declared;
    VerifySpec verify;
    std::string output_dir = "out";
    std::vector<std::string> commands{"check", "solve", "verify"};
};

// ---------------------------------------------------------------------------
// JSON output with fixed 17-significant-digit floats
// ---------------------------------------------------------------------------

/// %.17g, so doubles round-trip exactly; non-finite values print as null.
inline std::string format_double(double v) {
    if (!std::isfinite(v)) return "null";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    std::string s(buf);
    if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
    return s;
}

namespace detail {

inline void write_json(std::ostream& os, const Json& j, int indent, int depth) {
    const std::string pad(static_cast<std::size_t>(indent * (depth + 1)), ' ');
    const std::string close(static_cast<std::size_t>(indent * depth), ' ');
    switch (j.type()) {
    case Json::value_t::object: {
        if (j.empty()) {
            os << "{}";
            return;
        }
        os << "{\n";
        bool first = true;
        for (auto it = j.begin(); it != j.end(); ++it) {
            if (!first) os << ",\n";
            first = false;
            os << pad << Json(it.key()).dump() << ": ";
            write_json(os, it.value(), indent, depth + 1);
        }
        os << "\n" << close << "}";
        return;
    }
    case Json::value_t::array: {
        if (j.empty()) {
            os << "[]";
            return;
        }
        bool nested = false;
        for (const auto& v : j) nested = nested || v.is_structured();
        if (!nested) {
            os << "[";
            bool first = true;
            for (const auto& v : j) {
                if (!first) os << ", ";
                first = false;
                write_json(os, v, indent, depth + 1);
            }
            os << "]";
            return;
        }
        os << "[\n";
        bool first = true;
        for (const auto& v : j) {
            if (!first) os << ",\n";
            first = false;
            os << pad;
            write_json(os, v, indent, depth + 1);
        }
        os << "\n" << close << "]";
        return;
    }
    case Json::value_t::number_float: os << format_double(j.get<double>()); return;
    default: os << j.dump(); return;
    }
}

}  // namespace detail

inline std::string to_json_text(const Json& j, int indent = 2) {
    std::ostringstream os;
    detail::write_json(os, j, indent, 0);
    os << "\n";
    return os.str();
}

inline std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

namespace detail {

inline void require_keys(const Json& obj, const std::string& where,
                         std::initializer_list<std::string_view> allowed) {
    if (!obj.is_object()) throw Error(ErrorCode::config, where + " must be an object");
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool ok = false;
        for (auto a : allowed) ok = ok || it.key() == a;
        if (!ok) throw Error(ErrorCode::config, "unknown key '" + it.key() + "' in " + where);
    }
}

inline double get_number(const Json& obj, const std::string& key, const std::string& where) {
    if (!obj.contains(key)) throw Error(ErrorCode::config, where + "." + key + " is required");
    const auto& v = obj.at(key);
    if (!v.is_number()) throw Error(ErrorCode::config, where + "." + key + " must be a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw Error(ErrorCode::config, where + "." + key + " must be finite");
    return d;
}

inline double get_number_or(const Json& obj, const std::string& key, const std::string& where,
                            double fallback) {
    return obj.contains(key) ? get_number(obj, key, where) : fallback;
}

inline std::optional<double> get_optional(const Json& obj, const std::string& key,
                                          const std::string& where) {
    if (!obj.contains(key) || obj.at(key).is_null()) return std::nullopt;
    return get_number(obj, key, where);
}

inline std::int64_t get_int_or(const Json& obj, const std::string& key, const std::string& where,
                               std::int64_t fallback) {
    if (!obj.contains(key)) return fallback;
    const auto& v = obj.at(key);
    if (!v.is_number_integer()) throw Error(ErrorCode::config, where + "." + key + " must be an integer");
    return v.get<std::int64_t>();
}

inline std::vector<double> get_vector(const Json& obj, const std::string& key,
                                      const std::string& where, std::size_t expected = 0) {
    if (!obj.contains(key) || !obj.at(key).is_array()) {
        throw Error(ErrorCode::config, where + "." + key + " must be an array of numbers");
    }
    std::vector<double> out;
    for (const auto& v : obj.at(key)) {
        if (!v.is_number()) throw Error(ErrorCode::config, where + "." + key + " must hold numbers");
        out.push_back(v.get<double>());
    }
    if (expected != 0 && out.size() != expected) {
        throw Error(ErrorCode::config,
                    where + "." + key + " must have " + std::to_string(expected) + " entries");
    }
    return out;
}

inline std::string get_string(const Json& obj, const std::string& key, const std::string& where) {
    if (!obj.contains(key) || !obj.at(key).is_string()) {
        throw Error(ErrorCode::config, where + "." + key + " must be a string");
    }
    return obj.at(key).get<std::string>();
}

inline SolveMode parse_mode(const std::string& s) {
    if (s == "strong") return SolveMode::strong;
    if (s == "weak") return SolveMode::weak;
    throw Error(ErrorCode::config, "mode must be 'strong' or 'weak', got '" + s + "'");
}

inline SignCase parse_sign_case(const std::string& s) {
    if (s == "A_SIGMA_ZERO") return SignCase::a_sigma_zero;
    if (s == "CASE_II") return SignCase::case_ii;
    if (s == "CASE_III") return SignCase::case_iii;
    if (s == "UNKNOWN") return SignCase::unknown;
    throw Error(ErrorCode::config, "unknown sign_case '" + s + "'");
}

inline ModelSpec parse_model(const Json& j) {
    const std::string type = get_string(j, "type", "model");
    if (type == "bm_drift") {
        require_keys(j, "model", {"type", "m"});
        return BmDriftModel{get_number_or(j, "m", "model", 0.0)};
    }
    if (type == "sigmoid") {
        require_keys(j, "model", {"type", "p_sigma", "p_mu"});
        const auto ps = get_vector(j, "p_sigma", "model", 3);
        const auto pm = get_vector(j, "p_mu", "model", 3);
        SigmoidModel m;
        std::copy(ps.begin(), ps.end(), m.family.p_sigma.begin());
        std::copy(pm.begin(), pm.end(), m.family.p_mu.begin());
        return m;
    }
    throw Error(ErrorCode::config, "unknown model type '" + type + "'");
}

inline TargetSpec parse_target(const Json& j) {
    const std::string type = get_string(j, "type", "target");
    if (type == "normal") {
        require_keys(j, "target", {"type", "std", "mean"});
        if (j.contains("mean") && get_number(j, "mean", "target") != 0.0) {
            throw Error(ErrorCode::config, "normal targets are centred; target.mean must be 0");
        }
        return NormalTarget{get_number_or(j, "std", "target", 1.0)};
    }
    if (type == "exponential") {
        require_keys(j, "target", {"type", "rate"});
        return ExponentialTarget{get_number_or(j, "rate", "target", 1.0)};
    }
    if (type == "quantile_table" || type == "tabulated") {
        require_keys(j, "target", {"type", "p", "x", "g_prime_sup", "inv_g_prime_sup"});
        QuantileTableTarget t;
        t.p = get_vector(j, "p", "target");
        t.x = get_vector(j, "x", "target");
        t.g_prime_sup = get_optional(j, "g_prime_sup", "target");
        t.inv_g_prime_sup = get_optional(j, "inv_g_prime_sup", "target");
        return t;
    }
    throw Error(ErrorCode::config, "unknown target type '" + type + "'");
}

inline SolverConfig parse_numerics(const Json& j) {
    require_keys(j, "numerics",
                 {"n_steps", "n_paths", "n_iterations", "tol_picard", "mode", "seed", "basis_degree",
                  "ridge", "workers"});
    SolverConfig c;
    c.n_steps = static_cast<int>(get_int_or(j, "n_steps", "numerics", c.n_steps));
    c.n_paths = static_cast<int>(get_int_or(j, "n_paths", "numerics", c.n_paths));
    c.n_iterations = static_cast<int>(get_int_or(j, "n_iterations", "numerics", c.n_iterations));
    c.tol_picard = get_number_or(j, "tol_picard", "numerics", c.tol_picard);
    if (j.contains("mode")) c.mode = parse_mode(get_string(j, "mode", "numerics"));
    if (j.contains("seed")) {
        const auto& s = j.at("seed");
        if (!s.is_number_unsigned() && !(s.is_number_integer() && s.get<std::int64_t>() >= 0)) {
            throw Error(ErrorCode::config, "numerics.seed must be a nonnegative integer");
        }
        c.seed = s.get<std::uint64_t>();
    }
    c.basis.degree = static_cast<int>(get_int_or(j, "basis_degree", "numerics", c.basis.degree));
    c.basis.ridge = get_number_or(j, "ridge", "numerics", c.basis.ridge);
    const auto workers = get_int_or(j, "workers", "numerics", 1);
    if (workers < 1) throw Error(ErrorCode::config, "numerics.workers must be >= 1");
    c.workers = static_cast<unsigned>(workers);
    return c;
}

inline void parse_norms(const Json& j, RunConfig& cfg) {
    require_keys(j, "norms", {"estimate", "declared"});
    if (j.contains("estimate") && j.contains("declared")) {
        throw Error(ErrorCode::config, "norms: give either 'estimate' or 'declared', not both");
    }
    if (j.contains("estimate")) {
        const auto& e = j.at("estimate");
        require_keys(e, "norms.estimate", {"t", "a", "resolution"});
        GridEstimateSpec g;
        if (e.contains("t")) {
            const auto t = get_vector(e, "t", "norms.estimate", 2);
            g.box.t_lo = t[0];
            g.box.t_hi = t[1];
        }
        if (e.contains("a")) {
            const auto a = get_vector(e, "a", "norms.estimate", 2);
            g.box.a_lo = a[0];
            g.box.a_hi = a[1];
        }
        if (e.contains("resolution")) {
            const auto r = get_vector(e, "resolution", "norms.estimate", 2);
            g.resolution.n_t = static_cast<int>(r[0]);
            g.resolution.n_a = static_cast<int>(r[1]);
        }
        cfg.estimate = g;
    }
    if (j.contains("declared")) {
        const auto& d = j.at("declared");
        const std::string w = "norms.declared";
        require_keys(d, w,
                     {"epsilon", "sigma_sup", "mu_over_sigma2", "dt_mu_over_sigma2",
                      "da_mu_over_sigma2", "dt_sigma_over_sigma", "da_sigma_over_sigma", "inf_term",
                      "sign_case"});
        DeclaredNormsSpec s;
        s.norms.sigma_sup = get_number(d, "sigma_sup", w);
        s.norms.mu_over_sigma2 = get_number(d, "mu_over_sigma2", w);
        s.norms.dt_mu_over_sigma2 = get_number(d, "dt_mu_over_sigma2", w);
        s.norms.da_mu_over_sigma2 = get_number(d, "da_mu_over_sigma2", w);
        s.norms.dt_sigma_over_sigma = get_number(d, "dt_sigma_over_sigma", w);
        s.norms.da_sigma_over_sigma = get_number(d, "da_sigma_over_sigma", w);
        s.norms.inf_term = get_number(d, "inf_term", w);
        s.epsilon = get_optional(d, "epsilon", w);
        if (d.contains("sign_case")) s.sign_case = parse_sign_case(get_string(d, "sign_case", w));
        cfg.declared = s;
    }
}

inline VerifySpec parse_verify(const Json& j) {
    require_keys(j, "verify", {"p_min", "n_sub", "hist_bins"});
    VerifySpec v;
    v.p_min = get_number_or(j, "p_min", "verify", v.p_min);
    v.n_sub = static_cast<int>(get_int_or(j, "n_sub", "verify", v.n_sub));
    v.hist_bins = static_cast<int>(get_int_or(j, "hist_bins", "verify", v.hist_bins));
    if (!(v.p_min >= 0.0 && v.p_min <= 1.0)) throw Error(ErrorCode::config, "verify.p_min must lie in [0, 1]");
    if (v.n_sub < 1) throw Error(ErrorCode::config, "verify.n_sub must be >= 1");
    if (v.hist_bins < 1) throw Error(ErrorCode::config, "verify.hist_bins must be >= 1");
    return v;
}

}  // namespace detail

inline RunConfig parse_run_config(const Json& j) {
    detail::require_keys(j, "config",
                         {"model", "target", "numerics", "norms", "verify", "output_dir", "commands"});
    if (!j.contains("model")) throw Error(ErrorCode::config, "config.model is required");
    if (!j.contains("target")) throw Error(ErrorCode::config, "config.target is required");
    RunConfig cfg;
    cfg.model = detail::parse_model(j.at("model"));
    cfg.target = detail::parse_target(j.at("target"));
    if (j.contains("numerics")) cfg.numerics = detail::parse_numerics(j.at("numerics"));
    if (j.contains("norms")) detail::parse_norms(j.at("norms"), cfg);
    if (j.contains("verify")) cfg.verify = detail::parse_verify(j.at("verify"));
    if (j.contains("output_dir")) cfg.output_dir = detail::get_string(j, "output_dir", "config");
    if (j.contains("commands")) {
        cfg.commands.clear();
        for (const auto& c : j.at("commands")) {
            if (!c.is_string()) throw Error(ErrorCode::config, "config.commands must hold strings");
            const auto s = c.get<std::string>();
            if (s != "check" && s != "solve" && s != "verify") {
                throw Error(ErrorCode::config, "unknown command '" + s + "' in config.commands");
            }
            cfg.commands.push_back(s);
        }
    }
    return cfg;
}

inline RunConfig parse_run_config_text(const std::string& text) {
    Json j;
    try {
        j = Json::parse(text);
    } catch (const Json::parse_error& e) {
        throw Error(ErrorCode::config, std::string("config is not valid JSON: ") + e.what());
    }
    return parse_run_config(j);
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::io, "cannot open config '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_run_config_text(ss.str());
}

// ---------------------------------------------------------------------------
// Canonical form and hash
// ---------------------------------------------------------------------------

/// Everything that determines the numerical results; output_dir, workers,
/// force and the command chain are excluded.
inline Json canonical_json(const RunConfig& cfg) {
    Json j;
    std::visit(
        [&](const auto& m) {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, BmDriftModel>) {
                j["model"] = {{"type", "bm_drift"}, {"m", m.m}};
            } else {
                j["model"] = {{"type", "sigmoid"},
                              {"p_sigma", m.family.p_sigma},
                              {"p_mu", m.family.p_mu}};
            }
        },
        cfg.model);
    std::visit(
        [&](const auto& t) {
            using T = std::decay_t<decltype(t)>;
            if constexpr (std::is_same_v<T, NormalTarget>) {
                j["target"] = {{"type", "normal"}, {"std", t.std_dev}};
            } else if constexpr (std::is_same_v<T, ExponentialTarget>) {
                j["target"] = {{"type", "exponential"}, {"rate", t.rate}};
            } else {
                j["target"] = {{"type", "quantile_table"}, {"p", t.p}, {"x", t.x}};
                j["target"]["g_prime_sup"] = t.g_prime_sup ? Json(*t.g_prime_sup) : Json(nullptr);
                j["target"]["inv_g_prime_sup"] =
                    t.inv_g_prime_sup ? Json(*t.inv_g_prime_sup) : Json(nullptr);
            }
        },
        cfg.target);
    const auto& n = cfg.numerics;
    j["numerics"] = {{"n_steps", n.n_steps},
                     {"n_paths", n.n_paths},
                     {"n_iterations", n.n_iterations},
                     {"tol_picard", n.tol_picard},
                     {"mode", std::string(to_string(n.mode))},
                     {"seed", n.seed},
                     {"basis_degree", n.basis.degree},
                     {"ridge", n.basis.ridge}};
    if (cfg.estimate) {
        const auto& e = *cfg.estimate;
        j["norms"]["estimate"] = {{"t", {e.box.t_lo, e.box.t_hi}},
                                  {"a", {e.box.a_lo, e.box.a_hi}},
                                  {"resolution", {e.resolution.n_t, e.resolution.n_a}}};
    }
    if (cfg.declared) {
        const auto& d = *cfg.declared;
        Json dj = {{"sigma_sup", d.norms.sigma_sup},
                   {"mu_over_sigma2", d.norms.mu_over_sigma2},
                   {"dt_mu_over_sigma2", d.norms.dt_mu_over_sigma2},
                   {"da_mu_over_sigma2", d.norms.da_mu_over_sigma2},
                   {"dt_sigma_over_sigma", d.norms.dt_sigma_over_sigma},
                   {"da_sigma_over_sigma", d.norms.da_sigma_over_sigma},
                   {"inf_term", d.norms.inf_term}};
        if (d.epsilon) dj["epsilon"] = *d.epsilon;
        if (d.sign_case) dj["sign_case"] = std::string(to_string(*d.sign_case));
        j["norms"]["declared"] = dj;
    }
    j["verify"] = {{"p_min", cfg.verify.p_min},
                   {"n_sub", cfg.verify.n_sub},
                   {"hist_bins", cfg.verify.hist_bins}};
    return j;
}

inline std::string config_hash(const RunConfig& cfg) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(to_json_text(canonical_json(cfg), 0))));
    return buf;
}

// ---------------------------------------------------------------------------
// Building the numerical objects
// ---------------------------------------------------------------------------

inline TargetLaw build_law(const RunConfig& cfg) {
    return std::visit(
        [](const auto& t) -> TargetLaw {
            using T = std::decay_t<decltype(t)>;
            if constexpr (std::is_same_v<T, NormalTarget>) {
                return normal_law(t.std_dev);
            } else if constexpr (std::is_same_v<T, ExponentialTarget>) {
                return exponential_law(t.rate);
            } else {
                return tabulated_law(t.p, t.x, t.g_prime_sup, t.inv_g_prime_sup);
            }
        },
        cfg.target);
}

struct BuiltField {
    CoefficientField field;
    /// Admissibility failures detected by the model's closed forms.
    std::vector<FailedCheck> model_failures;
};

inline BuiltField build_field(const RunConfig& cfg, const TargetLaw& law) {
    BuiltField out;
    if (const auto* bm = std::get_if<BmDriftModel>(&cfg.model)) {
        out.field = bm_drift_field(bm->m);
    } else {
        const auto& fam = std::get<SigmoidModel>(cfg.model).family;
        const auto [sn, failures] = sigmoid_norms_report(fam, law.g_prime_sup);
        for (const auto& f : failures) out.model_failures.push_back({f.name, f.detail, std::nullopt});
        out.field = sigmoid_field(fam, law.g_prime_sup, false);
    }
    if (cfg.declared || cfg.estimate) out.model_failures.clear();
    if (cfg.declared) {
        out.field.norms = cfg.declared->norms;
        out.field.norms.provenance = NormProvenance::declared;
        if (cfg.declared->epsilon) out.field.epsilon = *cfg.declared->epsilon;
        if (cfg.declared->sign_case) out.field.sign_case = *cfg.declared->sign_case;
    }
    if (cfg.estimate) {
        out.field = with_grid_norms(std::move(out.field), cfg.estimate->box, cfg.estimate->resolution);
    }
    return out;
}

}  // namespace sep
