#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace rtcausal {

/// Bad or inconsistent input data (CLI exit code 2).
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class EstimationErrorKind {
    degenerate_fit,
    insufficient_design,
    separation,
    rank_deficiency,
    insufficient_arm,
    collinear_moderator,
    degenerate_scenario,
};

const char* to_string(EstimationErrorKind kind);

/// A model could not be estimated from otherwise valid input (CLI exit code 3).
class EstimationError : public std::runtime_error {
public:
    EstimationError(EstimationErrorKind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind) {}
    EstimationErrorKind kind() const noexcept { return kind_; }

private:
    EstimationErrorKind kind_;
};

/// Selects between the OpenMP kernel and its serial reference loop.
/// Both produce identical results; the serial path is kept for testing and benchmarking.
enum class Execution { serial, parallel };

/// Per-day series with explicit missing entries.
using Series = std::vector<std::optional<double>>;

/// Neumaier-compensated accumulator.
class CompensatedSum {
public:
    CompensatedSum& operator+=(double x) noexcept {
        const double t = sum_ + x;
        if (std::abs(sum_) >= std::abs(x))
            comp_ += (sum_ - t) + x;
        else
            comp_ += (x - t) + sum_;
        sum_ = t;
        return *this;
    }
    double value() const noexcept { return sum_ + comp_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

inline double expit(double x) noexcept {
    if (x >= 0) {
        const double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double logit(double p) noexcept { return std::log(p / (1.0 - p)); }

/// Two-sided normal p-value for a z statistic.
inline double two_sided_p(double z) noexcept { return std::erfc(std::abs(z) / std::sqrt(2.0)); }

}  // namespace rtcausal
