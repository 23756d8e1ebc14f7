#include "sep/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <map>
#include <string>

namespace {

struct CliOptions {
    std::string config;
    sep::Overrides overrides;
    std::string mode;
};

void add_common(CLI::App* sub, CliOptions& o) {
    sub->add_option("--config", o.config, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", o.overrides.seed, "Master seed");
    sub->add_option("--paths", o.overrides.n_paths, "Number of Monte Carlo paths");
    sub->add_option("--steps", o.overrides.n_steps, "Number of time steps");
    sub->add_option("--iterations", o.overrides.n_iterations, "Maximum Picard iterations");
    sub->add_option("--mode", o.mode, "strong or weak")->check(CLI::IsMember({"strong", "weak"}));
    sub->add_flag("--force", o.overrides.force, "Solve even when the admissibility checks fail");
    sub->add_option("--out", o.overrides.output_dir, "Output directory");
    sub->add_option("--workers", o.overrides.workers, "Worker threads (results do not depend on it)");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Skorokhod embedding via coupled forward-backward SDEs"};
    app.require_subcommand(1);
    CliOptions opts;

    using Command = int (*)(const sep::RunConfig&, std::ostream&);
    const std::map<std::string, std::pair<std::string, Command>> commands{
        {"check", {"Check the admissibility conditions and print the a-priori bounds", &sep::cmd_check}},
        {"solve", {"Run the Picard solver and write the solve artifacts", &sep::cmd_solve}},
        {"verify", {"Simulate the diffusion up to tau and test the terminal law", &sep::cmd_verify}},
        {"run", {"check, solve and verify in sequence", &sep::cmd_run}},
    };
    for (const auto& [name, entry] : commands) add_common(app.add_subcommand(name, entry.first), opts);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : sep::exit_code::config_or_io;
    }

    try {
        auto cfg = sep::load_run_config(opts.config);
        if (!opts.mode.empty()) opts.overrides.mode = sep::detail::parse_mode(opts.mode);
        sep::apply_overrides(cfg, opts.overrides);
        for (const auto& [name, entry] : commands) {
            if (app.got_subcommand(name)) return entry.second(cfg, std::cerr);
        }
    } catch (const sep::Error& e) {
        std::cerr << e.what() << "\n";
        return sep::exit_code_for(e.code());
    }
    return sep::exit_code::config_or_io;
}
