#pragma once

// Logistic propensity model for the probability that an at-risk region adopts within the window,
// fitted by solving the pooled score equation over design rows.

#include "rtcausal/design.hpp"

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace rtcausal {

inline constexpr double kProbabilityClip = 1e-8;

struct PropensityOptions {
    int max_iterations = 100;
    double tolerance = 1e-10;
    double divergence_norm = 30.0;
};

struct PropensityFit {
    std::vector<std::string> covariate_names;
    Eigen::VectorXd beta;
    Eigen::VectorXd q;                        // per row, clipped
    std::vector<std::optional<double>> p_case;  // per event; missing when the case row was not retained
    Eigen::MatrixXd v;                        // one row per region
    Eigen::MatrixXd covariance;               // sum_i V_i V_i^T / n^2
    bool converged = false;
    int iterations = 0;
    double score_norm = 0.0;
    std::size_t clipped = 0;

    Eigen::VectorXd standard_errors() const;
};

/// Solves sum_rows x (delta - expit(x'beta)) = 0 by Newton iteration with step halving, then
/// computes clipped probabilities and the per-region influence vectors.
PropensityFit fit_propensity(const EstimationSample& sample, const PropensityOptions& options = {});

/// V_i = [n^-1 sum_k sum_j x x' q(1-q)]^-1 sum_{j in S(i)} x (delta - q), one row per region.
Eigen::MatrixXd influence_vectors(const EstimationSample& sample, const Eigen::VectorXd& q);

/// Score vector sum_rows x (delta - q).
Eigen::VectorXd propensity_score(const EstimationSample& sample, const Eigen::VectorXd& beta);

struct CoefficientRow {
    std::string name;
    double estimate = 0.0;
    double std_error = 0.0;
    double z = 0.0;
    double p_value = 1.0;
};

std::vector<CoefficientRow> coefficient_table(const PropensityFit& fit);

}  // namespace rtcausal
