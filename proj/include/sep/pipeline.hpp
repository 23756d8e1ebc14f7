#pragma once

// check / solve / verify / run orchestration and artifact I/O.

#include "sep/config.hpp"
#include "sep/paths.hpp"
#include "sep/solver.hpp"
#include "sep/verify.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace sep {

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int config_or_io = 1;
inline constexpr int assumptions = 2;
inline constexpr int diverged = 3;
inline constexpr int embedding_failed = 4;
}  // namespace exit_code

inline int exit_code_for(ErrorCode code) noexcept {
    switch (code) {
    case ErrorCode::assumption_violated:
    case ErrorCode::ellipticity_violation: return exit_code::assumptions;
    case ErrorCode::diverged:
    case ErrorCode::evaluation:
    case ErrorCode::domain: return exit_code::diverged;
    default: return exit_code::config_or_io;
    }
}

/// Command-line settings that take precedence over the config document.
struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<int> n_paths;
    std::optional<int> n_steps;
    std::optional<int> n_iterations;
    std::optional<SolveMode> mode;
    std::optional<std::string> output_dir;
    std::optional<unsigned> workers;
    bool force = false;
};

inline void apply_overrides(RunConfig& cfg, const Overrides& o) {
    if (o.seed) cfg.numerics.seed = *o.seed;
    if (o.n_paths) cfg.numerics.n_paths = *o.n_paths;
    if (o.n_steps) cfg.numerics.n_steps = *o.n_steps;
    if (o.n_iterations) cfg.numerics.n_iterations = *o.n_iterations;
    if (o.mode) cfg.numerics.mode = *o.mode;
    if (o.output_dir) cfg.output_dir = *o.output_dir;
    if (o.workers) {
        if (*o.workers < 1) throw Error(ErrorCode::config, "--workers must be >= 1");
        cfg.numerics.workers = *o.workers;
    }
    if (o.force) cfg.numerics.force = true;
}

namespace artifact {
inline constexpr const char* check = "check.json";
inline constexpr const char* summary = "summary.json";
inline constexpr const char* solve_paths = "solve_paths.csv";
inline constexpr const char* convergence = "convergence.csv";
inline constexpr const char* brownian = "brownian.bin";
inline constexpr const char* embedding = "embedding.json";
inline constexpr const char* paths = "paths.csv";
inline constexpr const char* hist_a_tau = "hist_a_tau.csv";
inline constexpr const char* hist_tau = "hist_tau.csv";
}  // namespace artifact

namespace detail {

inline std::filesystem::path out_path(const RunConfig& cfg, const char* name) {
    return std::filesystem::path(cfg.output_dir) / name;
}

inline void ensure_output_dir(const RunConfig& cfg) {
    std::error_code ec;
    std::filesystem::create_directories(cfg.output_dir, ec);
    if (ec) throw Error(ErrorCode::io, "cannot create '" + cfg.output_dir + "': " + ec.message());
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
    std::ofstream os(p, std::ios::binary | std::ios::trunc);
    os << text;
    if (!os) throw Error(ErrorCode::io, "cannot write '" + p.string() + "'");
}

inline std::string read_text(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw Error(ErrorCode::io, "missing artifact '" + p.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline Json header(const RunConfig& cfg) {
    Json j;
    j["config_hash"] = config_hash(cfg);
    j["seed"] = cfg.numerics.seed;
    j["zcheck_convention"] = std::string(kZCheckConvention);
    return j;
}

inline Json point_json(const std::optional<GridPoint>& p) {
    if (!p) return nullptr;
    return Json{{"t", p->t}, {"a", p->a}};
}

inline Json opt_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

inline std::string histogram_csv(const Histogram& h) {
    std::string s = "bin_lo,bin_hi,count\n";
    for (std::size_t k = 0; k < h.counts.size(); ++k) {
        s += format_double(h.bin_edges[k]) + "," + format_double(h.bin_edges[k + 1]) + "," +
             std::to_string(h.counts[k]) + "\n";
    }
    return s;
}

inline double parse_double_field(std::string_view s, const std::string& where) {
    double v = 0.0;
    const auto* end = s.data() + s.size();
    const auto r = std::from_chars(s.data(), end, v);
    if (r.ec != std::errc() || r.ptr != end) {
        throw Error(ErrorCode::io, "corrupt value '" + std::string(s) + "' in " + where);
    }
    return v;
}

inline std::vector<std::string_view> split_csv(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        const auto pos = line.find(',', start);
        out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) return out;
        start = pos + 1;
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// check
// ---------------------------------------------------------------------------

struct CheckOutcome {
    TargetLaw law;
    BuiltField built;
    AssumptionReport report;
    std::optional<ZBounds> bounds;
    std::optional<Error> bounds_error;
    bool holds = false;
    Json json;
};

inline CheckOutcome evaluate_check(const RunConfig& cfg) {
    CheckOutcome out;
    out.law = build_law(cfg);
    out.built = build_field(cfg, out.law);
    out.report = check_assumptions(out.built.field, out.law);
    out.holds = out.report.holds && out.built.model_failures.empty();
    const bool need_lower = cfg.numerics.mode == SolveMode::strong;
    try {
        out.bounds = compute_bounds(out.built.field, out.law, out.report, need_lower);
    } catch (const Error& e) {
        out.bounds_error = e;
    }

    const auto& f = out.built.field;
    Json j = detail::header(cfg);
    j["model"] = canonical_json(cfg)["model"]["type"];
    j["target"] = out.law.name;
    j["mode"] = std::string(to_string(cfg.numerics.mode));
    j["holds"] = out.holds;
    j["assumption_case"] =
        out.report.assumption_case ? Json(std::string(to_string(*out.report.assumption_case))) : Json(nullptr);
    j["provenance"] = std::string(to_string(out.report.provenance));
    Json failed = Json::array();
    for (const auto& m : out.built.model_failures) {
        failed.push_back({{"name", m.name}, {"detail", m.detail}, {"witness", nullptr}});
    }
    for (const auto& c : out.report.failed_checks) {
        failed.push_back({{"name", c.name}, {"detail", c.detail}, {"witness", detail::point_json(c.witness)}});
    }
    j["failed_checks"] = failed;
    j["epsilon"] = f.epsilon;
    j["sign_case"] = std::string(to_string(f.sign_case));
    j["norms"] = {{"sigma_sup", f.norms.sigma_sup},
                  {"mu_over_sigma2", f.norms.mu_over_sigma2},
                  {"dt_mu_over_sigma2", f.norms.dt_mu_over_sigma2},
                  {"da_mu_over_sigma2", f.norms.da_mu_over_sigma2},
                  {"dt_sigma_over_sigma", f.norms.dt_sigma_over_sigma},
                  {"da_sigma_over_sigma", f.norms.da_sigma_over_sigma},
                  {"inf_term", f.norms.inf_term},
                  {"inf_witness", detail::point_json(f.norms.inf_witness)},
                  {"provenance", std::string(to_string(f.norms.provenance))}};
    j["g_prime_sup"] = out.law.g_prime_sup;
    j["inv_g_prime_sup"] = detail::opt_json(out.law.inv_g_prime_sup);
    if (out.bounds) {
        const auto& b = *out.bounds;
        j["bounds"] = {{"z_hat", b.z_hat},
                       {"u2_norm_bound", b.u2_norm_bound},
                       {"z_check", b.has_lower ? Json(b.z_check) : Json(nullptr)},
                       {"has_lower", b.has_lower},
                       {"tau_lo", b.tau_lo},
                       {"tau_hi", b.tau_hi},
                       {"advisory", b.advisory}};
        j["bounds_error"] = nullptr;
    } else {
        j["bounds"] = nullptr;
        j["bounds_error"] = out.bounds_error->what();
    }
    out.json = std::move(j);
    return out;
}

inline int cmd_check(const RunConfig& cfg, std::ostream& log = std::cerr) {
    try {
        auto outcome = evaluate_check(cfg);
        detail::ensure_output_dir(cfg);
        detail::write_text(detail::out_path(cfg, artifact::check), to_json_text(outcome.json));
        if (!outcome.holds) {
            for (const auto& fc : outcome.json["failed_checks"]) {
                log << "check failed: " << fc["name"].get<std::string>() << ": "
                    << fc["detail"].get<std::string>() << "\n";
            }
            return exit_code::assumptions;
        }
        if (outcome.bounds_error) {
            log << outcome.bounds_error->what() << "\n";
            return exit_code_for(outcome.bounds_error->code());
        }
        log << "assumptions hold; z_hat = " << format_double(outcome.bounds->z_hat)
            << ", tau in [" << format_double(outcome.bounds->tau_lo) << ", "
            << format_double(outcome.bounds->tau_hi) << "]\n";
        return exit_code::ok;
    } catch (const Error& e) {
        log << e.what() << "\n";
        return exit_code_for(e.code());
    }
}

// ---------------------------------------------------------------------------
// solve
// ---------------------------------------------------------------------------

inline Json summary_json(const RunConfig& cfg, const PicardResult& res, const ZBounds& zb) {
    const auto [mn, mx] = std::minmax_element(res.tau.begin(), res.tau.end());
    double sum = 0.0;
    for (double t : res.tau) sum += t;
    Json j = detail::header(cfg);
    j["mode"] = std::string(to_string(res.mode));
    j["n_paths"] = cfg.numerics.n_paths;
    j["n_steps"] = cfg.numerics.n_steps;
    j["y0"] = res.y0;
    j["y0_std_error"] = res.y0_std_error;
    j["tau"] = {{"min", *mn}, {"mean", sum / static_cast<double>(res.tau.size())}, {"max", *mx}};
    j["tau_bounds"] = {{"lo", zb.tau_lo}, {"hi", zb.tau_hi}, {"advisory", zb.advisory}};
    j["iterations_used"] = res.iterations_used;
    j["converged"] = res.converged;
    j["final_rms_change"] = res.history.empty() ? Json(nullptr) : Json(res.history.back().rms_change);
    j["max_martingale_defect"] = res.max_martingale_defect;
    j["forced"] = cfg.numerics.force;
    return j;
}

inline void write_solve_artifacts(const RunConfig& cfg, const PicardResult& res, const ZBounds& zb) {
    detail::ensure_output_dir(cfg);
    detail::write_text(detail::out_path(cfg, artifact::summary), to_json_text(summary_json(cfg, res, zb)));

    const auto& st = res.state;
    const Eigen::Index last = st.Y.cols() - 1;
    std::string paths = "path_id,tau,w1,y_0,y_1\n";
    for (std::size_t p = 0; p < res.tau.size(); ++p) {
        const auto r = static_cast<Eigen::Index>(p);
        paths += std::to_string(p) + "," + format_double(res.tau[p]) + "," + format_double(st.W(r, last)) +
                 "," + format_double(st.Y(r, 0)) + "," + format_double(st.Y(r, last)) + "\n";
    }
    detail::write_text(detail::out_path(cfg, artifact::solve_paths), paths);

    std::string conv = "iteration,rms_change,y0\n";
    for (const auto& h : res.history) {
        conv += std::to_string(h.iteration) + "," + format_double(h.rms_change) + "," + format_double(h.y0) + "\n";
    }
    detail::write_text(detail::out_path(cfg, artifact::convergence), conv);

    const auto bin = detail::out_path(cfg, artifact::brownian);
    std::ofstream os(bin, std::ios::binary | std::ios::trunc);
    write_stores(os, res.stores);
    if (!os) throw Error(ErrorCode::io, "cannot write '" + bin.string() + "'");
}

inline int cmd_solve(const RunConfig& cfg, std::ostream& log = std::cerr) {
    try {
        cfg.numerics.validate();
        auto outcome = evaluate_check(cfg);
        if (!outcome.holds && !cfg.numerics.force) {
            std::string names;
            for (const auto& fc : outcome.json["failed_checks"]) {
                names += (names.empty() ? "" : ", ") + fc["name"].get<std::string>();
            }
            log << "assumptions violated (" << names << "); rerun with --force to solve anyway\n";
            return exit_code::assumptions;
        }
        if (outcome.bounds_error) throw *outcome.bounds_error;
        const auto& zb = *outcome.bounds;
        const auto& field = outcome.built.field;
        PicardResult res = cfg.numerics.mode == SolveMode::strong
                               ? picard_solve(cfg.numerics, field, outcome.law, zb)
                               : solve_weak(cfg.numerics, field, outcome.law, zb).picard;
        write_solve_artifacts(cfg, res, zb);
        log << "y0 = " << format_double(res.y0) << " (SE " << format_double(res.y0_std_error) << "), "
            << res.iterations_used << " iterations" << (res.converged ? "" : " (not converged)") << "\n";
        return exit_code::ok;
    } catch (const DivergedError& e) {
        log << e.what() << "\n";
        return exit_code::diverged;
    } catch (const Error& e) {
        log << e.what() << "\n";
        return exit_code_for(e.code());
    }
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

struct SolveArtifacts {
    double y0 = 0.0;
    std::vector<double> tau;
    std::vector<double> w1;
    std::vector<PathStore> stores;
};

inline SolveArtifacts load_solve_artifacts(const RunConfig& cfg) {
    SolveArtifacts a;
    Json summary;
    try {
        summary = Json::parse(detail::read_text(detail::out_path(cfg, artifact::summary)));
    } catch (const Json::exception& e) {
        throw Error(ErrorCode::io, std::string("corrupt summary: ") + e.what());
    }
    if (!summary.contains("config_hash") || summary["config_hash"] != config_hash(cfg)) {
        throw Error(ErrorCode::io, "summary was produced by a different configuration; rerun solve");
    }
    if (!summary.contains("y0") || !summary["y0"].is_number()) throw Error(ErrorCode::io, "summary lacks y0");
    a.y0 = summary["y0"].get<double>();

    const auto where = detail::out_path(cfg, artifact::solve_paths).string();
    std::istringstream csv(detail::read_text(where));
    std::string line;
    if (!std::getline(csv, line) || line != "path_id,tau,w1,y_0,y_1") {
        throw Error(ErrorCode::io, "unexpected header in " + where);
    }
    while (std::getline(csv, line)) {
        if (line.empty()) continue;
        const auto cells = detail::split_csv(line);
        if (cells.size() != 5) throw Error(ErrorCode::io, "malformed row in " + where);
        const double id = detail::parse_double_field(cells[0], where);
        if (id != static_cast<double>(a.tau.size())) throw Error(ErrorCode::io, "path ids out of order in " + where);
        const double tau = detail::parse_double_field(cells[1], where);
        if (!std::isfinite(tau) || !(tau > 0.0)) {
            throw Error(ErrorCode::io, "invalid stopping time in " + where);
        }
        a.tau.push_back(tau);
        a.w1.push_back(detail::parse_double_field(cells[2], where));
    }
    if (a.tau.empty()) throw Error(ErrorCode::io, "no paths in " + where);

    const auto bin = detail::out_path(cfg, artifact::brownian);
    std::ifstream is(bin, std::ios::binary);
    if (!is) throw Error(ErrorCode::io, "missing artifact '" + bin.string() + "'");
    a.stores = read_stores(is);
    if (a.stores.size() != a.tau.size()) {
        throw Error(ErrorCode::io, "path count mismatch between " + where + " and " + bin.string());
    }
    return a;
}

struct VerifyOutcome {
    EmbeddingReport report;
    bool passed = false;
    std::string test_used;
    double gate_p_value = 0.0;
};

inline Json embedding_json(const RunConfig& cfg, const VerifyOutcome& v, const ZBounds& zb) {
    const auto& r = v.report;
    Json j = detail::header(cfg);
    j["target"] = build_law(cfg).name;
    j["y0"] = r.y0;
    j["n_paths"] = r.a_tau_samples.size();
    j["n_sub"] = r.n_sub;
    j["tau"] = {{"min", r.tau_stats.min}, {"mean", r.tau_stats.mean}, {"max", r.tau_stats.max}};
    Json viol = Json::array();
    for (std::size_t k = 0; k < r.tau_violations.size() && k < 20; ++k) {
        viol.push_back({{"path", r.tau_violations[k].path}, {"tau", r.tau_violations[k].tau}});
    }
    j["tau_bounds"] = {{"lo", zb.tau_lo},
                       {"hi", zb.tau_hi},
                       {"advisory", zb.advisory},
                       {"respected", r.tau_bounds_respected},
                       {"violation_count", r.tau_violations.size()},
                       {"violations", viol}};
    j["ks"] = {{"statistic", r.ks_statistic}, {"p_value", r.ks_p_value}};
    if (r.normality_p_value) {
        j["normality"] = {{"test", "dagostino_pearson"}, {"k2", *r.normality_k2}, {"p_value", *r.normality_p_value}};
    } else {
        j["normality"] = nullptr;
    }
    j["gate"] = {{"test", v.test_used}, {"p_value", v.gate_p_value}, {"p_min", cfg.verify.p_min}, {"passed", v.passed}};
    j["histograms"] = {
        {"a_tau",
         {{"file", artifact::hist_a_tau}, {"underflow", r.a_tau_histogram.underflow},
          {"overflow", r.a_tau_histogram.overflow}}},
        {"tau",
         {{"file", artifact::hist_tau}, {"underflow", r.tau_stats.histogram.underflow},
          {"overflow", r.tau_stats.histogram.overflow}, {"markers", {{"tau_lo", zb.tau_lo}, {"tau_hi", zb.tau_hi}}}}}};
    return j;
}

inline int cmd_verify(const RunConfig& cfg, std::ostream& log = std::cerr) {
    try {
        auto art = load_solve_artifacts(cfg);
        auto outcome = evaluate_check(cfg);
        if (outcome.bounds_error) throw *outcome.bounds_error;
        const auto& zb = *outcome.bounds;

        VerifyOptions opt;
        opt.n_sub = cfg.verify.n_sub;
        opt.hist_bins = cfg.verify.hist_bins;
        opt.workers = cfg.numerics.workers;
        VerifyOutcome v;
        v.report = verify_embedding(art.y0, art.tau, art.stores, outcome.built.field, outcome.law, zb, opt);
        if (v.report.normality_p_value) {
            v.test_used = "dagostino_pearson";
            v.gate_p_value = *v.report.normality_p_value;
        } else {
            v.test_used = "kolmogorov_smirnov";
            v.gate_p_value = v.report.ks_p_value;
        }
        v.passed = v.report.tau_bounds_respected && v.gate_p_value >= cfg.verify.p_min;

        detail::write_text(detail::out_path(cfg, artifact::embedding), to_json_text(embedding_json(cfg, v, zb)));
        std::string paths = "path_id,tau,w1,a_tau\n";
        for (std::size_t p = 0; p < art.tau.size(); ++p) {
            paths += std::to_string(p) + "," + format_double(art.tau[p]) + "," + format_double(art.w1[p]) + "," +
                     format_double(v.report.a_tau_samples[p]) + "\n";
        }
        detail::write_text(detail::out_path(cfg, artifact::paths), paths);
        detail::write_text(detail::out_path(cfg, artifact::hist_a_tau), detail::histogram_csv(v.report.a_tau_histogram));
        detail::write_text(detail::out_path(cfg, artifact::hist_tau),
                           detail::histogram_csv(v.report.tau_stats.histogram));

        log << "KS p = " << format_double(v.report.ks_p_value);
        if (v.report.normality_p_value) log << ", normality p = " << format_double(*v.report.normality_p_value);
        log << ", tau bounds " << (v.report.tau_bounds_respected ? "respected" : "VIOLATED") << "\n";
        if (!v.passed) {
            log << "embedding test failed (" << v.test_used << " p = " << format_double(v.gate_p_value)
                << ", p_min = " << format_double(cfg.verify.p_min) << ")\n";
            return exit_code::embedding_failed;
        }
        return exit_code::ok;
    } catch (const Error& e) {
        log << e.what() << "\n";
        return e.code() == ErrorCode::sample_too_small ? exit_code::embedding_failed : exit_code_for(e.code());
    }
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

/// Executes the configured command chain, stopping at the first nonzero exit.
/// A failed check does not stop a forced run.
inline int cmd_run(const RunConfig& cfg, std::ostream& log = std::cerr) {
    for (const auto& c : cfg.commands) {
        int rc = exit_code::ok;
        if (c == "check") {
            rc = cmd_check(cfg, log);
            if (rc == exit_code::assumptions && cfg.numerics.force) rc = exit_code::ok;
        } else if (c == "solve") {
            rc = cmd_solve(cfg, log);
        } else {
            rc = cmd_verify(cfg, log);
        }
        if (rc != exit_code::ok) return rc;
    }
    return exit_code::ok;
}

}  // namespace sep
