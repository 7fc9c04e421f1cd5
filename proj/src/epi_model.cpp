#include "rtcausal/epi_model.hpp"

#include <Eigen/Dense>
#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace rtcausal {

// ---- SurvivalSpec ----

SurvivalSpec SurvivalSpec::exponential(double rate, double tail) {
    if (!(rate > 0.0) || !std::isfinite(rate)) throw InputError("exponential survival rate must be positive");
    if (!(tail > 0.0 && tail < 1.0)) throw InputError("survival tail threshold must be in (0, 1)");
    std::vector<double> table{1.0};
    for (int m = 1;; ++m) {
        const double s = std::exp(-rate * m);
        table.push_back(s);
        if (s < tail) break;
    }
    return SurvivalSpec(std::move(table), rate);
}

SurvivalSpec SurvivalSpec::tabulated(std::vector<double> table) {
    if (table.empty() || table.front() != 1.0) throw InputError("survival table must start with S(0) = 1");
    for (std::size_t m = 1; m < table.size(); ++m) {
        if (!(table[m] >= 0.0 && table[m] <= table[m - 1]))
            throw InputError("survival table must be nonincreasing in [0, 1] (entry " + std::to_string(m) + ")");
    }
    return SurvivalSpec(std::move(table), 0.0);
}

double SurvivalSpec::tail_mass() const noexcept {
    return std::accumulate(table_.begin() + 1, table_.end(), 0.0);
}

// ---- RateFunction ----

RateFunction::RateFunction(std::vector<int> knot_days, std::vector<double> knot_values)
    : days_(std::move(knot_days)), values_(std::move(knot_values)) {
    if (days_.empty() || days_.size() != values_.size())
        throw InputError("rate function needs matching, nonempty knot days and values");
    for (std::size_t k = 1; k < days_.size(); ++k)
        if (days_[k] <= days_[k - 1]) throw InputError("rate knot days must be strictly increasing");
    for (double v : values_)
        if (!(v >= 0.0) || !std::isfinite(v)) throw InputError("rate knot values must be finite and nonnegative");
}

RateFunction::Basis RateFunction::basis(int day) const noexcept {
    const std::size_t last = days_.size() - 1;
    if (day <= days_.front()) return {0, 1.0, 0, 0.0};
    if (day >= days_[last]) return {last, 1.0, last, 0.0};
    const auto it = std::upper_bound(days_.begin(), days_.end(), day);
    const std::size_t hi = static_cast<std::size_t>(it - days_.begin());
    const std::size_t lo = hi - 1;
    const double w_hi = static_cast<double>(day - days_[lo]) / static_cast<double>(days_[hi] - days_[lo]);
    return {lo, 1.0 - w_hi, hi, w_hi};
}

double RateFunction::operator()(int day) const noexcept {
    const Basis b = basis(day);
    return b.w_lo * values_[b.lo] + b.w_hi * values_[b.hi];
}

// ---- SerialIntervalPmf ----

SerialIntervalPmf SerialIntervalPmf::discretized_gamma(double mean, double sd) {
    if (!(mean > 0.0) || !(sd > 0.0)) throw InputError("serial interval mean and sd must be positive");
    const double shape = (mean / sd) * (mean / sd);
    const double scale = sd * sd / mean;
    auto cdf = [&](double x) { return x <= 0.0 ? 0.0 : boost::math::gamma_p(shape, x / scale); };
    std::vector<double> w;
    for (int k = 1; k <= 200; ++k) {
        w.push_back(cdf(k + 0.5) - cdf(k - 0.5));
        if (1.0 - cdf(k + 0.5) < 1e-10) break;
    }
    const double total = std::accumulate(w.begin(), w.end(), 0.0);
    for (double& x : w) x /= total;
    return SerialIntervalPmf(std::move(w));
}

SerialIntervalPmf SerialIntervalPmf::from_weights(std::vector<double> lag_weights) {
    if (lag_weights.empty()) throw InputError("serial interval needs at least one lag");
    double total = 0.0;
    for (double x : lag_weights) {
        if (!(x >= 0.0)) throw InputError("serial interval weights must be nonnegative");
        total += x;
    }
    if (std::abs(total - 1.0) > 1e-9) throw InputError("serial interval weights must sum to one");
    return SerialIntervalPmf(std::move(lag_weights));
}

// ---- convolution primitives ----

namespace {

void check_history(std::span<const double> history) {
    if (history.empty()) throw InputError("history must be nonempty");
    for (double x : history)
        if (!(x >= 0.0)) throw InputError("history values must be nonnegative");
}

}  // namespace

double convolve_step(std::span<const double> history, const SurvivalSpec& survival, double rate) {
    check_history(history);
    if (!(rate >= 0.0)) throw InputError("infection rate must be nonnegative");
    const int t = static_cast<int>(history.size()) - 1;
    const int upper = std::min(t, survival.truncation() - 1);
    double sum = 0.0;
    for (int m = 0; m <= upper; ++m) sum += history[static_cast<std::size_t>(t - m)] * survival(m + 1);
    return rate * sum;
}

double removed_count(std::span<const double> history, const SurvivalSpec& survival, int t) {
    check_history(history);
    if (t < 0 || t >= static_cast<int>(history.size())) throw InputError("day outside history");
    const int upper = std::min(t, survival.truncation());
    double sum = 0.0;
    for (int m = 0; m <= upper; ++m)
        sum += history[static_cast<std::size_t>(t - m)] * (survival(m) - survival(m + 1));
    return sum;
}

double infectious_mass(std::span<const double> history, const SurvivalSpec& survival, int t) {
    check_history(history);
    if (t < 0 || t >= static_cast<int>(history.size())) throw InputError("day outside history");
    const int upper = std::min(t, survival.truncation());
    double sum = 0.0;
    for (int m = 0; m <= upper; ++m) sum += history[static_cast<std::size_t>(t - m)] * survival(m);
    return sum;
}

// ---- forward model ----

namespace {

/// Runs the recursion from the seed day. Index s = 0 is the seed, day(s) = s - t0_offset.
/// When `jac` is non-null it receives dN(s)/d(knot value k), row-major length x K.
void run_model(double seed, int t0_offset, const RateFunction& rate, const SurvivalSpec& survival, int length,
               std::vector<double>& n, std::vector<double>* jac) {
    const int K = static_cast<int>(rate.size());
    const int M = survival.truncation();
    const auto& values = rate.knot_values();
    n.assign(static_cast<std::size_t>(length), 0.0);
    n[0] = seed;
    if (jac) jac->assign(static_cast<std::size_t>(length) * K, 0.0);

    const bool fast = survival.is_exponential();
    const double rho = fast ? std::exp(-survival.exponential_rate()) : 0.0;
    const double rho_out = fast ? std::exp(-survival.exponential_rate() * (M + 1)) : 0.0;
    double conv = 0.0;
    std::vector<double> dconv(static_cast<std::size_t>(K), 0.0);

    for (int s = 0; s + 1 < length; ++s) {
        if (fast) {
            conv = rho * n[s] + rho * conv;
            if (s >= M) conv -= rho_out * n[s - M];
            if (conv < 0.0) conv = 0.0;
        } else {
            conv = 0.0;
            const int upper = std::min(s, M - 1);
            for (int m = 0; m <= upper; ++m) conv += n[s - m] * survival(m + 1);
        }
        const int day = s - t0_offset;
        const RateFunction::Basis b = rate.basis(day);
        const double a = b.w_lo * values[b.lo] + b.w_hi * values[b.hi];
        n[s + 1] = a * conv;

        if (jac) {
            double* row_next = jac->data() + static_cast<std::size_t>(s + 1) * K;
            for (int k = 0; k < K; ++k) {
                double dc;
                if (fast) {
                    dc = rho * (*jac)[static_cast<std::size_t>(s) * K + k] + rho * dconv[k];
                    if (s >= M) dc -= rho_out * (*jac)[static_cast<std::size_t>(s - M) * K + k];
                } else {
                    dc = 0.0;
                    const int upper = std::min(s, M - 1);
                    for (int m = 0; m <= upper; ++m)
                        dc += (*jac)[static_cast<std::size_t>(s - m) * K + k] * survival(m + 1);
                }
                dconv[k] = dc;
                row_next[k] = a * dc;
            }
            row_next[b.lo] += b.w_lo * conv;
            row_next[b.hi] += b.w_hi * conv;
        }
    }
}

void check_simulation_args(double seed_count, int t0_offset, int horizon) {
    if (!(seed_count > 0.0)) throw InputError("seed count must be positive");
    if (t0_offset < 0) throw InputError("t0 offset must be nonnegative");
    if (horizon < 1) throw InputError("horizon must be at least one day");
}

}  // namespace

std::vector<double> simulate_trajectory(double seed_count, int t0_offset, const RateFunction& rate,
                                        const SurvivalSpec& survival, int horizon) {
    check_simulation_args(seed_count, t0_offset, horizon);
    std::vector<double> n;
    run_model(seed_count, t0_offset, rate, survival, t0_offset + horizon, n, nullptr);
    return n;
}

std::vector<double> simulate_cases(double seed_count, int t0_offset, const RateFunction& rate,
                                   const SurvivalSpec& survival, int horizon) {
    auto full = simulate_trajectory(seed_count, t0_offset, rate, survival, horizon);
    return {full.begin() + t0_offset, full.end()};
}

// ---- fitting ----

namespace {

struct LocalFit {
    std::vector<double> theta;
    double loss = std::numeric_limits<double>::infinity();
    bool converged = false;
    int iterations = 0;
};

class SqrtLoss {
public:
    SqrtLoss(std::span<const double> obs, int t0_offset, const RateFunction& shape, const SurvivalSpec& survival)
        : sqrt_obs_(obs.size()), t0_(t0_offset), shape_(shape), survival_(survival) {
        for (std::size_t i = 0; i < obs.size(); ++i) sqrt_obs_[i] = std::sqrt(obs[i]);
    }

    int dim() const { return static_cast<int>(shape_.size()); }
    int residual_count() const { return static_cast<int>(sqrt_obs_.size()); }

    /// Fills residuals r = sqrt(obs) - sqrt(N) and, if requested, J = dr/dtheta. Returns the loss.
    double evaluate(const std::vector<double>& theta, Eigen::VectorXd& r, Eigen::MatrixXd* J) {
        const RateFunction rate = shape_.with_values(theta);
        const int n_obs = residual_count();
        run_model(1.0, t0_, rate, survival_, t0_ + n_obs, n_, J ? &jac_ : nullptr);
        r.resize(n_obs);
        if (J) J->resize(n_obs, dim());
        CompensatedSum loss;
        for (int d = 0; d < n_obs; ++d) {
            const std::size_t s = static_cast<std::size_t>(t0_ + d);
            const double fitted = n_[s];
            if (!std::isfinite(fitted)) return std::numeric_limits<double>::infinity();
            const double root = std::sqrt(fitted);
            r[d] = sqrt_obs_[static_cast<std::size_t>(d)] - root;
            loss += r[d] * r[d];
            if (J) {
                const double denom = 2.0 * std::max(root, 1e-8);
                for (int k = 0; k < dim(); ++k) (*J)(d, k) = -jac_[s * dim() + k] / denom;
            }
        }
        return loss.value();
    }

private:
    std::vector<double> sqrt_obs_;
    int t0_;
    const RateFunction& shape_;
    const SurvivalSpec& survival_;
    std::vector<double> n_;
    std::vector<double> jac_;
};

/// Projected Levenberg-Marquardt on theta >= 0.
LocalFit minimize(SqrtLoss& problem, std::vector<double> theta, int max_iterations, double rel_tol) {
    const int K = problem.dim();
    Eigen::VectorXd r, r_try;
    Eigen::MatrixXd J;
    LocalFit out;
    double loss = problem.evaluate(theta, r, &J);
    double mu = 1e-3;
    int it = 0;
    bool converged = false;
    bool need_jacobian = false;

    while (it < max_iterations) {
        if (loss <= 1e-300) {
            converged = true;
            break;
        }
        if (need_jacobian) {
            loss = problem.evaluate(theta, r, &J);
            need_jacobian = false;
        }
        ++it;
        const Eigen::VectorXd g = J.transpose() * r;  // half the loss gradient
        Eigen::MatrixXd H = J.transpose() * J;

        // Coordinates pinned at the lower bound whose descent direction points outside stay fixed.
        std::vector<int> free;
        for (int k = 0; k < K; ++k)
            if (!(theta[static_cast<std::size_t>(k)] <= 0.0 && g[k] > 0.0)) free.push_back(k);
        if (free.empty()) {
            converged = true;
            break;
        }
        const int F = static_cast<int>(free.size());
        Eigen::MatrixXd Hf(F, F);
        Eigen::VectorXd gf(F);
        double max_diag = 0.0;
        for (int i = 0; i < F; ++i) {
            gf[i] = g[free[i]];
            for (int j = 0; j < F; ++j) Hf(i, j) = H(free[i], free[j]);
            max_diag = std::max(max_diag, Hf(i, i));
        }
        if (max_diag <= 0.0) {
            converged = true;
            break;
        }
        for (int i = 0; i < F; ++i) Hf(i, i) += mu * std::max(Hf(i, i), 1e-12 * max_diag);
        const Eigen::VectorXd step = Hf.ldlt().solve(gf);

        std::vector<double> trial = theta;
        for (int i = 0; i < F; ++i) {
            const auto k = static_cast<std::size_t>(free[i]);
            trial[k] = std::max(0.0, theta[k] - step[i]);
        }
        const double trial_loss = problem.evaluate(trial, r_try, nullptr);
        if (trial_loss < loss) {
            const double improvement = (loss - trial_loss) / loss;
            theta = std::move(trial);
            loss = trial_loss;
            need_jacobian = true;
            mu = std::max(mu / 3.0, 1e-12);
            if (improvement < rel_tol) {
                converged = true;
                break;
            }
        } else {
            mu *= 4.0;
            if (mu > 1e14) {
                // No descent direction left at working precision.
                converged = true;
                break;
            }
        }
    }
    if (need_jacobian) loss = problem.evaluate(theta, r, nullptr);
    out.theta = std::move(theta);
    out.loss = loss;
    out.converged = converged;
    out.iterations = it;
    return out;
}

}  // namespace

std::vector<int> knot_schedule(std::vector<int> intervention_days, int n_days, int spacing, int min_tail) {
    if (spacing < 1) throw InputError("knot spacing must be positive");
    const int last_allowed = n_days - 1 - min_tail;
    std::sort(intervention_days.begin(), intervention_days.end());
    intervention_days.erase(std::unique(intervention_days.begin(), intervention_days.end()), intervention_days.end());
    std::vector<int> anchors;
    for (int d : intervention_days)
        if (d > 0 && d <= last_allowed) anchors.push_back(d);

    std::vector<int> knots;
    int previous = 0;
    for (std::size_t i = 0; i <= anchors.size(); ++i) {
        const bool tail = i == anchors.size();
        const int limit = tail ? last_allowed : anchors[i] - spacing / 2;
        for (int d = previous + spacing; d <= limit; d += spacing) knots.push_back(d);
        if (!tail) {
            knots.push_back(anchors[i]);
            previous = anchors[i];
        }
    }
    return knots;
}

EpidemicFit fit_epidemic(const IncidenceSeries& obs, std::span<const int> knots, const SurvivalSpec& survival,
                         const FitOptions& options) {
    const auto& counts = obs.counts;
    for (double c : counts)
        if (!(c >= 0.0) || !std::isfinite(c)) throw InputError("incidence counts must be finite and nonnegative");
    if (std::all_of(counts.begin(), counts.end(), [](double c) { return c == 0.0; }))
        throw EstimationError(EstimationErrorKind::degenerate_fit,
                              "region '" + obs.region_id + "': all-zero incidence series cannot be fitted");
    if (counts.size() < knots.size() + 2)
        throw InputError("region '" + obs.region_id + "': series shorter than number of knots + 2");
    for (std::size_t k = 0; k < knots.size(); ++k) {
        if (knots[k] < 0) throw InputError("knot days must be nonnegative");
        if (k > 0 && knots[k] <= knots[k - 1]) throw InputError("knot days must be strictly increasing");
    }
    if (options.t0_min < 0 || options.t0_max < options.t0_min) throw InputError("invalid t0 search range");
    if (options.start_levels.size() < 3) throw InputError("fit needs at least three starting points");

    const int n_t0 = options.t0_max - options.t0_min + 1;
    const int n_starts = static_cast<int>(options.start_levels.size());
    const double critical = 1.0 / std::max(survival.tail_mass(), 1e-12);

    auto shape_for = [&](int t0) {
        std::vector<int> days{-t0};
        for (int k : knots)
            if (k > -t0) days.push_back(k);
        return RateFunction(days, std::vector<double>(days.size(), 0.0));
    };

    std::vector<LocalFit> results(static_cast<std::size_t>(n_t0) * n_starts);
    auto solve_one = [&](int idx) {
        const int t0 = options.t0_min + idx / n_starts;
        const double level = options.start_levels[static_cast<std::size_t>(idx % n_starts)] * critical;
        const RateFunction shape = shape_for(t0);
        SqrtLoss problem(counts, t0, shape, survival);
        results[static_cast<std::size_t>(idx)] = minimize(problem, std::vector<double>(shape.size(), level),
                                                          options.max_iterations, options.relative_tolerance);
    };
    const int total = n_t0 * n_starts;
    if (options.execution == Execution::parallel) {
#pragma omp parallel for schedule(dynamic)
        for (int idx = 0; idx < total; ++idx) solve_one(idx);
    } else {
        for (int idx = 0; idx < total; ++idx) solve_one(idx);
    }

    // Serial reduction in grid order keeps the choice independent of thread scheduling;
    // equal losses resolve to the smaller offset.
    int best = -1;
    for (int idx = 0; idx < total; ++idx) {
        const LocalFit& cand = results[static_cast<std::size_t>(idx)];
        if (!std::isfinite(cand.loss)) continue;
        if (best < 0 || cand.loss < results[static_cast<std::size_t>(best)].loss * (1.0 - 1e-12)) best = idx;
    }
    if (best < 0)
        throw EstimationError(EstimationErrorKind::degenerate_fit,
                              "region '" + obs.region_id + "': no finite fit over the t0 grid");

    const LocalFit& winner = results[static_cast<std::size_t>(best)];
    EpidemicFit fit;
    fit.region_id = obs.region_id;
    fit.t0_offset = options.t0_min + best / n_starts;
    fit.rate = shape_for(fit.t0_offset).with_values(winner.theta);
    const int n_days = static_cast<int>(counts.size());
    const auto full = simulate_trajectory(1.0, fit.t0_offset, fit.rate, survival, n_days);
    fit.fitted_n.assign(full.begin() + fit.t0_offset, full.end());
    const Series rt_full = reproduction_number(full, options.serial_interval);
    fit.rt.assign(rt_full.begin() + fit.t0_offset, rt_full.end());
    fit.loss = winner.loss;
    fit.converged = winner.converged;
    fit.iterations = winner.iterations;
    return fit;
}

// ---- reproduction number ----

Series reproduction_number(std::span<const double> n, const SerialIntervalPmf& w) {
    for (double x : n)
        if (!(x >= 0.0)) throw InputError("incidence must be nonnegative for R_t");
    Series rt(n.size());
    const int K = w.max_lag();
    for (int t = 0; t < static_cast<int>(n.size()); ++t) {
        double denom = 0.0;
        for (int k = 1; k <= std::min(K, t); ++k) denom += w[k] * n[static_cast<std::size_t>(t - k)];
        if (denom > 1e-12) rt[static_cast<std::size_t>(t)] = n[static_cast<std::size_t>(t)] / denom;
    }
    return rt;
}

std::optional<double> outcome_change(const Series& rt, int t, int delta) {
    if (delta < 1) throw InputError("outcome window must be at least one day");
    if (t < 0 || t + delta >= static_cast<int>(rt.size())) return std::nullopt;
    const auto& start = rt[static_cast<std::size_t>(t)];
    const auto& end = rt[static_cast<std::size_t>(t + delta)];
    if (!start || !end) return std::nullopt;
    return *end - *start;
}

std::vector<double> moving_average_7(std::span<const double> counts) {
    std::vector<double> out(counts.size());
    double window = 0.0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
        window += counts[i];
        if (i >= 7) window -= counts[i - 7];
        out[i] = window / static_cast<double>(std::min<std::size_t>(i + 1, 7));
    }
    return out;
}

}  // namespace rtcausal
