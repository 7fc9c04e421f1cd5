#pragma once

// Survival-convolution transmission model and renewal-equation reproduction numbers.
//
// Day coordinates: day 0 is the first reported case of a region. The (possibly undetected)
// first infection sits t0_offset days earlier, at day -t0_offset. New infections follow
//
//     N(t+1) = a(t) * sum_{m>=0} N(t-m) S(m+1)
//
// with a(t) a piecewise-linear infection rate and S the infectious-survival function.

#include "rtcausal/common.hpp"
#include "rtcausal/dates.hpp"

#include <span>
#include <string>
#include <vector>

namespace rtcausal {

struct IncidenceSeries {
    std::string region_id;
    Date origin_date{};             // calendar date of day 0
    std::vector<double> counts;     // new cases per day, day 0 first
    std::vector<bool> imputed;      // true where a missing day was filled with 0
};

/// Probability S(m) of still being infectious m days after infection.
/// S(0) = 1, nonincreasing, zero beyond the truncation day M.
class SurvivalSpec {
public:
    /// S(m) = exp(-rate m), truncated at the first m with S(m) < tail.
    static SurvivalSpec exponential(double rate, double tail = 1e-6);
    /// Table S(0..M).
    static SurvivalSpec tabulated(std::vector<double> table);

    double operator()(int m) const noexcept {
        if (m < 0) return 1.0;
        return m < static_cast<int>(table_.size()) ? table_[static_cast<std::size_t>(m)] : 0.0;
    }
    int truncation() const noexcept { return static_cast<int>(table_.size()) - 1; }
    bool is_exponential() const noexcept { return exponential_rate_ > 0.0; }
    double exponential_rate() const noexcept { return exponential_rate_; }
    std::span<const double> table() const noexcept { return table_; }

    /// sum_{m>=0} S(m+1): expected onward-infectious days of one infection.
    double tail_mass() const noexcept;

private:
    SurvivalSpec(std::vector<double> table, double rate) : table_(std::move(table)), exponential_rate_(rate) {}
    std::vector<double> table_;
    double exponential_rate_ = 0.0;
};

/// Continuous piecewise-linear a(t), constant beyond the first and last knots.
class RateFunction {
public:
    RateFunction() : days_{0}, values_{0.0} {}
    RateFunction(std::vector<int> knot_days, std::vector<double> knot_values);

    static RateFunction constant(double value, int day = 0) { return RateFunction({day}, {value}); }

    double operator()(int day) const noexcept;

    /// Interpolation weights at `day`: a(day) = w_lo * value[lo] + w_hi * value[hi].
    struct Basis {
        std::size_t lo = 0;
        double w_lo = 1.0;
        std::size_t hi = 0;
        double w_hi = 0.0;
    };
    Basis basis(int day) const noexcept;

    const std::vector<int>& knot_days() const noexcept { return days_; }
    const std::vector<double>& knot_values() const noexcept { return values_; }
    std::size_t size() const noexcept { return days_.size(); }

    RateFunction with_values(std::vector<double> values) const { return RateFunction(days_, std::move(values)); }

private:
    std::vector<int> days_;
    std::vector<double> values_;
};

/// Serial-interval probabilities w_k for lags k = 1..K (w_0 is fixed at zero).
class SerialIntervalPmf {
public:
    /// Gamma(mean, sd) density integrated over [k - 0.5, k + 0.5) for k >= 1, renormalized.
    static SerialIntervalPmf discretized_gamma(double mean = 4.7, double sd = 2.9);
    /// Weights for lags 1..K; must be nonnegative and sum to one within 1e-9.
    static SerialIntervalPmf from_weights(std::vector<double> lag_weights);

    double operator[](int lag) const noexcept {
        if (lag < 1 || lag > max_lag()) return 0.0;
        return weights_[static_cast<std::size_t>(lag - 1)];
    }
    int max_lag() const noexcept { return static_cast<int>(weights_.size()); }
    std::span<const double> weights() const noexcept { return weights_; }

private:
    explicit SerialIntervalPmf(std::vector<double> w) : weights_(std::move(w)) {}
    std::vector<double> weights_;
};

struct EpidemicFit {
    std::string region_id;
    int t0_offset = 0;                 // days before day 0 of the seed infection
    RateFunction rate;                 // first knot at day -t0_offset
    std::vector<double> fitted_n;      // fitted new infections, days 0..n-1
    Series rt;                         // reproduction number, days 0..n-1; nullopt where undefined
    double loss = 0.0;                 // sum of squared sqrt-scale residuals
    bool converged = false;
    int iterations = 0;
};

/// One step of the convolution recursion. `history` holds N(0..t) in chronological order;
/// returns N(t+1) = rate * sum_m N(t-m) S(m+1).
double convolve_step(std::span<const double> history, const SurvivalSpec& survival, double rate);

/// Number of infections leaving the transmission chain right after day t:
/// W(t) = sum_m N(t-m) [S(m) - S(m+1)]. `history` holds N(0..) chronologically.
double removed_count(std::span<const double> history, const SurvivalSpec& survival, int t);

/// Infectious mass M(t) = sum_m N(t-m) S(m).
double infectious_mass(std::span<const double> history, const SurvivalSpec& survival, int t);

/// Full deterministic trajectory from one seed at day -t0_offset through day horizon-1.
/// Element 0 is the seed day; length is t0_offset + horizon.
std::vector<double> simulate_trajectory(double seed_count, int t0_offset, const RateFunction& rate,
                                        const SurvivalSpec& survival, int horizon);

/// New infections on days 0..horizon-1.
std::vector<double> simulate_cases(double seed_count, int t0_offset, const RateFunction& rate,
                                   const SurvivalSpec& survival, int horizon);

struct FitOptions {
    int t0_min = 0;
    int t0_max = 30;
    /// Starting points, given as multiples of the critical rate 1 / sum S(m+1). At least three.
    std::vector<double> start_levels{0.8, 1.3, 2.0};
    int max_iterations = 500;
    double relative_tolerance = 1e-10;
    SerialIntervalPmf serial_interval = SerialIntervalPmf::discretized_gamma();
    Execution execution = Execution::parallel;
};

/// Least-squares fit of sqrt(observed) against sqrt(model) over the seed-offset grid and
/// nonnegative knot values. `knots` are days >= 0; a knot at the seed day is always added.
EpidemicFit fit_epidemic(const IncidenceSeries& obs, std::span<const int> knots, const SurvivalSpec& survival,
                         const FitOptions& options = {});

/// Intervention days plus a knot every `spacing` days between them and after the last one,
/// stopping `min_tail` days before the end of the series.
std::vector<int> knot_schedule(std::vector<int> intervention_days, int n_days, int spacing = 14, int min_tail = 7);

/// Renewal-equation ratio R_t = N(t) / sum_{k>=1} w_k N(t-k); undefined where the
/// denominator is at most 1e-12.
Series reproduction_number(std::span<const double> n, const SerialIntervalPmf& w);

/// R_{t+delta} - R_t, or nullopt when either end is undefined or out of range.
std::optional<double> outcome_change(const Series& rt, int t, int delta);

/// Trailing 7-day moving average, for display only.
std::vector<double> moving_average_7(std::span<const double> counts);

}  // namespace rtcausal
