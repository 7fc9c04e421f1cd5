#include "rtcausal/pipeline.hpp"

#include <CLI11.hpp>

#include <functional>
#include <iostream>

using namespace rtcausal;

namespace {

// Options write into `flags`; after parsing, only the ones given on the command line are copied
// over the config-file values.
struct Overrides {
    RunConfig flags;
    std::vector<std::pair<CLI::Option*, std::function<void(RunConfig&, const RunConfig&)>>> apply;

    template <class T>
    void add(CLI::App& app, const std::string& name, T RunConfig::*field, const std::string& help) {
        auto* opt = app.add_option(name, flags.*field, help);
        apply.emplace_back(opt, [field](RunConfig& to, const RunConfig& from) { to.*field = from.*field; });
    }
    void add_flag(CLI::App& app, const std::string& name, bool RunConfig::*field, const std::string& help) {
        auto* opt = app.add_flag(name, flags.*field, help);
        apply.emplace_back(opt, [field](RunConfig& to, const RunConfig& from) { to.*field = from.*field; });
    }
    void merge(RunConfig& into) const {
        for (const auto& [opt, fn] : apply)
            if (opt->count() > 0) fn(into, flags);
    }
};

void register_options(CLI::App& app, Overrides& o) {
    o.add(app, "--cases", &RunConfig::cases, "daily or cumulative case CSV");
    o.add(app, "--covariates", &RunConfig::covariates, "baseline covariate CSV");
    o.add(app, "--interventions", &RunConfig::interventions, "intervention dates CSV");
    o.add(app, "--hospitalization", &RunConfig::hospitalization, "additional daily series CSV");
    o.add(app, "--population", &RunConfig::population, "population CSV for per-capita scaling");
    o.add(app, "--rt", &RunConfig::rt, "precomputed R_t CSV (skips epidemic fits)");
    o.add(app, "--scenario", &RunConfig::scenario, "synthetic scenario JSON");
    o.add(app, "-o,--output-dir", &RunConfig::output_dir, "output directory");
    o.add(app, "--intervention", &RunConfig::intervention_names, "intervention(s) to analyze");
    o.add(app, "--vocabulary", &RunConfig::vocabulary, "accepted intervention names");
    o.add(app, "--delta-min", &RunConfig::delta_min, "smallest window in the sweep");
    o.add(app, "--delta-max", &RunConfig::delta_max, "largest window in the sweep");
    o.add(app, "--delta", &RunConfig::detail_deltas, "windows for detailed tables");
    o.add(app, "--survival-rate", &RunConfig::survival_rate, "exponential infectious-survival rate per day");
    o.add(app, "--si-mean", &RunConfig::serial_interval_mean, "serial interval mean (days)");
    o.add(app, "--si-sd", &RunConfig::serial_interval_sd, "serial interval sd (days)");
    o.add(app, "--t0-max", &RunConfig::t0_max, "largest seed offset searched");
    o.add(app, "--knot-spacing", &RunConfig::knot_spacing, "days between fill knots");
    o.add(app, "--screen-k", &RunConfig::screen_k, "covariates kept by screening");
    o.add(app, "--missing-threshold", &RunConfig::missing_threshold, "largest tolerated missing fraction");
    o.add(app, "--propensity-covariates", &RunConfig::propensity_covariates, "fixed propensity covariates");
    o.add_flag(app, "--strict", &RunConfig::strict, "drop rows with a different intervention inside the window");
    o.add(app, "--moderators", &RunConfig::moderators, "HTE moderators");
    o.add(app, "--seed", &RunConfig::seed, "random seed for simulate/coverage");
    o.add(app, "--replicates", &RunConfig::replicates, "Monte Carlo replicates for coverage");
    o.add_flag(app, "--serial", &RunConfig::serial, "use the serial reference kernels");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Transmission-model fits and intervention effect estimates from regional incidence data"};
    app.require_subcommand(1);
    std::string config_path;
    Overrides overrides;
    const char* names[] = {"fit", "rt", "design", "ate", "hte", "sweep", "simulate", "coverage", "report"};
    const char* help[] = {"fit the transmission model to each region",
                          "write R_t series",
                          "write design snapshots",
                          "ATE, propensity coefficients and screening at the detail windows",
                          "heterogeneous-effect regression at the detail windows",
                          "ATE grid over the window range",
                          "generate a synthetic dataset",
                          "Monte Carlo coverage study",
                          "all tables, grid and plot data"};
    std::vector<CLI::App*> subs;
    for (int k = 0; k < 9; ++k) {
        auto* sub = app.add_subcommand(names[k], help[k]);
        sub->add_option("-c,--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
        register_options(*sub, overrides);
        subs.push_back(sub);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        RunConfig cfg = config_path.empty() ? RunConfig{} : load_config(config_path);
        overrides.merge(cfg);
        Command command = Command::report;
        for (int k = 0; k < 9; ++k)
            if (subs[static_cast<std::size_t>(k)]->parsed()) command = *parse_command(names[k]);
        const auto outcome = run_pipeline(cfg, command);
        if (outcome.exit_code != 0) std::cerr << "error: " << outcome.message << "\n";
        for (const auto& a : outcome.artifacts) std::cout << (cfg.output_dir / a).string() << "\n";
        return outcome.exit_code;
    } catch (const InputError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
