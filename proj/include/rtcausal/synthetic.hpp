#pragma once

// Synthetic staggered-adoption data with a known propensity model and a known effect, plus the
// Monte Carlo harness that runs the full estimator on replicates.

#include "rtcausal/causal_estimators.hpp"
#include "rtcausal/design.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace rtcausal {

enum class EffectScale { rt, rate };

struct ScenarioSpec {
    int n_regions = 40;
    int horizon = 120;
    std::uint64_t seed = 1;
    std::string intervention = "lockdown";

    // Adoption is only possible on these days; a region at risk adopts with probability
    // expit(intercept + rt*(rt_7d - 1) + x1*X1 + x2*X2 [+ u*U]).
    std::vector<int> decision_days{20, 35, 50, 65, 80, 95};
    double assign_intercept = -1.4;
    double assign_rt = 1.5;
    double assign_x1 = 0.6;
    double assign_x2 = -0.4;
    double assign_u = 1.5;

    // Untreated R_t: level + slope * t + daily noise, with level and slope depending on X (and U).
    double r0_mean = 1.2;
    double r0_x1 = 0.1;
    double r0_sd = 0.1;
    double slope_mean = -0.003;
    double slope_x1 = 0.002;
    double slope_x2 = -0.001;
    double slope_sd = 0.001;
    double slope_u = 0.004;
    double noise_sd = 0.05;

    EffectScale effect_scale = EffectScale::rt;
    double effect = 0.0;
    std::vector<double> group_effects;   // when set, region i belongs to group i % size and gets that effect
    int delay_days = 7;

    bool confounding_leak = false;       // unobserved U drives adoption and the R_t slope
    bool delayed_effect = false;         // effect ramps in linearly over delay_days
    bool interference = false;           // every region's R_t moves with the share of adopters
    double interference_strength = 0.5;

    // rate-scale mode
    double rate_lo = 0.15;
    double rate_hi = 0.3;
    int rate_knot_spacing = 30;
    double survival_rate = 0.2;

    double seed_cases = 20.0;
};

void to_json(nlohmann::json& j, const ScenarioSpec& s);
void from_json(const nlohmann::json& j, ScenarioSpec& s);

struct Truth {
    std::vector<std::optional<int>> adoption_day;
    std::vector<double> region_effect;                 // g_i (full effect size)
    std::vector<int> group;
    std::vector<double> x1, x2, u;
    std::vector<std::vector<double>> adoption_probability;   // [region][decision day], NaN when not at risk
    std::vector<std::vector<double>> untreated_rt;     // counterfactual R_t without the intervention
    std::vector<double> gamma;                          // true gamma(delta) for delta = 0..30, averaged over design rows
};

struct SyntheticData {
    std::vector<RegionRecord> records;
    Truth truth;
};

/// Reproducible given spec.seed.
SyntheticData generate(const ScenarioSpec& spec);

/// Default analysis for synthetic data: the true propensity covariates, no screening.
AnalysisOptions synthetic_analysis();

std::uint64_t replicate_seed(std::uint64_t seed, std::uint64_t replicate);

struct ReplicateResult {
    bool ok = false;
    std::string error;
    double gamma_hat = 0.0;
    double sigma2_hat = 0.0;
    double truth = 0.0;
    bool covered = false;
    bool rejects_zero = false;
};

struct Estimate {
    double value = 0.0;
    double mc_se = 0.0;
};

struct CoverageSummary {
    int replicates = 0;
    int failures = 0;
    int delta = 0;
    Estimate mean_gamma;
    Estimate truth;
    Estimate bias;
    Estimate empirical_variance;
    Estimate mean_sigma2;
    Estimate coverage;
    Estimate rejection_rate;
    std::vector<ReplicateResult> results;
};

CoverageSummary coverage_study(const ScenarioSpec& spec, int replicates, int delta,
                               const AnalysisOptions& options = synthetic_analysis(),
                               Execution execution = Execution::parallel);

struct HteReplicate {
    bool ok = false;
    std::string error;
    Eigen::VectorXd theta;
    Eigen::VectorXd se;
    std::vector<bool> rejects;
};

struct HteSummary {
    int replicates = 0;
    int failures = 0;
    std::vector<Estimate> mean_theta;
    std::vector<double> truth;
    std::vector<Estimate> power;
    std::vector<HteReplicate> results;
};

/// Group-indicator moderators (one column per group, no intercept) on data with group_effects.
HteSummary hte_study(const ScenarioSpec& spec, int replicates, int delta,
                     const AnalysisOptions& options = synthetic_analysis(),
                     Execution execution = Execution::parallel);

}  // namespace rtcausal
