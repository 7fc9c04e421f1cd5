#pragma once

// Standardized-weight IPW difference-in-differences estimator of the average intervention effect,
// its plug-in variance, the moderator regression for heterogeneous effects, and the sweep over
// window sizes.

#include "rtcausal/design.hpp"
#include "rtcausal/propensity.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace rtcausal {

inline constexpr double kNormal975 = 1.96;

struct AteResult {
    int delta = 0;
    double gamma_hat = 0.0;
    double sigma2_hat = 0.0;
    double ci_lo = 0.0;
    double ci_hi = 0.0;
    // per-region components
    Eigen::VectorXd a, b, c, d, u;
    std::size_t treated_rows = 0;
    std::size_t control_rows = 0;
    std::size_t boundary_case_probabilities = 0;   // q_ii at the clip boundary

    double std_error() const { return std::sqrt(sigma2_hat); }
};

/// Point estimate and the per-region sums A_i, B_i, C_i, D_i.
AteResult estimate_ate(const EstimationSample& sample, const PropensityFit& fit, int delta = 0);

/// Fills U_i, sigma^2 = n^-2 sum (U_i - mean U)^2 and the 95% interval.
void ate_variance(const EstimationSample& sample, const PropensityFit& fit, AteResult& ate);

/// estimate_ate followed by ate_variance.
AteResult analyze_ate(const EstimationSample& sample, const PropensityFit& fit, int delta = 0);

struct Moderators {
    std::vector<std::string> names;   // includes the intercept column when wanted
    Eigen::MatrixXd z;                // one row per region of the sample
};

struct HteResult {
    std::vector<std::string> z_names;
    Eigen::VectorXd theta;
    Eigen::MatrixXd psi;
    Eigen::MatrixXd sigma1;
    Eigen::MatrixXd sigma2;
    Eigen::VectorXd wald_z;
    Eigen::VectorXd p_value;
    Eigen::MatrixXd w;                // one row per region

    bool rejects(Eigen::Index l) const { return wald_z[l] > kNormal975; }
};

HteResult estimate_hte(const EstimationSample& sample, const PropensityFit& fit, const Moderators& moderators);

/// Builds a moderator matrix from baseline covariates of the sample's regions, intercept first.
Moderators moderators_from_baseline(const EstimationSample& sample, std::span<const RegionRecord> records,
                                    std::span<const std::string> names, bool intercept = true);

struct AnalysisOptions {
    DesignOptions design;
    int screen_k = 10;                   // 0 uses `covariates` as given
    double missing_threshold = 0.2;
    std::vector<std::string> covariates; // used when screen_k == 0
    PropensityOptions propensity;
};

struct Analysis {
    DesignTable table;
    ScreeningReport screening;
    EstimationSample sample;
    PropensityFit fit;
    AteResult ate;
};

/// Design, screening, propensity fit and ATE for one intervention and window.
Analysis analyze(std::span<const RegionRecord> records, const std::string& intervention, int delta,
                 const AnalysisOptions& options = {});

struct SweepCell {
    int delta = 0;
    std::optional<AteResult> ate;
    std::vector<CoefficientRow> coefficients;
    std::size_t rows = 0;
    std::size_t events = 0;
    std::string error;                   // empty when the cell is feasible
    std::optional<EstimationErrorKind> error_kind;
};

/// Refits the design and the propensity model at every window; failures become infeasible cells.
std::vector<SweepCell> delta_sweep(std::span<const RegionRecord> records, const std::string& intervention,
                                   std::span<const int> deltas, const AnalysisOptions& options = {},
                                   Execution execution = Execution::parallel);

/// "estimate (se)" to three decimals, or "-" when infeasible.
std::string format_cell(const SweepCell& cell);

}  // namespace rtcausal
