#pragma once

// End-to-end runs: ingestion, per-region epidemic fits, design, propensity, effect estimates and
// the artifacts written for each CLI subcommand.

#include "rtcausal/causal_estimators.hpp"
#include "rtcausal/ingest.hpp"
#include "rtcausal/synthetic.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace rtcausal {

struct RunConfig {
    std::filesystem::path cases;
    std::filesystem::path covariates;
    std::filesystem::path interventions;
    std::filesystem::path hospitalization;
    std::filesystem::path population;
    std::filesystem::path rt;              // precomputed R_t; skips the epidemic fits
    std::filesystem::path scenario;        // synthetic scenario JSON for simulate/coverage
    std::filesystem::path output_dir = "out";

    std::vector<std::string> intervention_names;   // empty: every vocabulary name present in the data
    std::vector<std::string> vocabulary = default_intervention_vocabulary();
    int delta_min = 1;
    int delta_max = 30;
    std::vector<int> detail_deltas{7, 14};         // windows for design snapshots, coefficients and HTE

    double survival_rate = 0.1;
    double serial_interval_mean = 4.7;
    double serial_interval_sd = 2.9;
    int t0_max = 30;
    int knot_spacing = 14;

    int screen_k = 10;
    double missing_threshold = 0.2;
    std::vector<std::string> propensity_covariates;   // fixed propensity covariates; disables screening
    bool strict = false;
    std::vector<std::string> moderators;           // HTE moderators; an intercept is always added

    std::uint64_t seed = 1;
    int replicates = 500;
    bool serial = false;
};

void to_json(nlohmann::json& j, const RunConfig& c);
/// Rejects unknown keys and wrong types.
void from_json(const nlohmann::json& j, RunConfig& c);

RunConfig load_config(const std::filesystem::path& path);

enum class Command { fit, rt, design, ate, hte, sweep, simulate, coverage, report };

const char* to_string(Command c);
std::optional<Command> parse_command(const std::string& name);

/// Referenced input files exist, the window range lies in [1, 30], and the command's required
/// inputs are present. Throws InputError.
void validate(const RunConfig& config, Command command);

struct RunOutcome {
    int exit_code = 0;                 // 0 ok, 2 input error, 3 estimation error
    std::string message;
    std::vector<std::string> artifacts;
};

/// Runs the stages needed by `command`, writes its artifacts and manifest.json under
/// config.output_dir. Errors are recorded in the manifest with the failing stage.
RunOutcome run_pipeline(const RunConfig& config, Command command);

/// Header line of every CSV artifact, keyed by file name.
const std::map<std::string, std::string>& artifact_headers();

/// Lowercase hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

}  // namespace rtcausal
