#include "rtcausal/synthetic.hpp"

#include "rtcausal/epi_model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <random>

namespace rtcausal {

namespace {

constexpr int kMaxDelta = 30;

const char* to_string(EffectScale s) { return s == EffectScale::rt ? "rt" : "rate"; }

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

void validate(const ScenarioSpec& s) {
    auto fail = [](const std::string& why) {
        throw EstimationError(EstimationErrorKind::degenerate_scenario, "degenerate scenario: " + why);
    };
    if (s.n_regions < 2) fail("need at least 2 regions");
    if (s.horizon < 20) fail("horizon shorter than 20 days");
    if (s.decision_days.empty()) fail("no decision days, so no events are possible");
    for (int d : s.decision_days)
        if (d < 8 || d > s.horizon - 2) fail("decision day " + std::to_string(d) + " outside [8, horizon - 2]");
    if (!std::isfinite(s.assign_intercept)) fail("adoption intercept is not finite");
    if (s.delay_days < 1) fail("delay_days must be positive");
    if (s.effect_scale == EffectScale::rate && !(s.rate_hi >= s.rate_lo && s.rate_lo >= 0)) fail("bad rate bounds");
}

double ramp(const ScenarioSpec& s, int k) {
    if (k < 1) return 0.0;
    return s.delayed_effect ? std::min(1.0, static_cast<double>(k) / s.delay_days) : 1.0;
}

struct RegionDraws {
    double x1, x2, u, level, slope;
    std::vector<double> noise;
    std::vector<double> rate_knots;
};

// Share-of-adopters spillover seen by region i on day t.
double spillover(const ScenarioSpec& s, const std::vector<std::optional<int>>& T, const std::vector<double>& g, int i,
                 int t) {
    if (!s.interference) return 0.0;
    double sum = 0.0;
    for (std::size_t k = 0; k < T.size(); ++k)
        if (static_cast<int>(k) != i && T[k] && *T[k] < t) sum += g[k];
    return s.interference_strength * sum / static_cast<double>(T.size() - 1);
}

}  // namespace

void to_json(nlohmann::json& j, const ScenarioSpec& s) {
    j = nlohmann::json{{"n_regions", s.n_regions},
                       {"horizon", s.horizon},
                       {"seed", s.seed},
                       {"intervention", s.intervention},
                       {"decision_days", s.decision_days},
                       {"assign_intercept", s.assign_intercept},
                       {"assign_rt", s.assign_rt},
                       {"assign_x1", s.assign_x1},
                       {"assign_x2", s.assign_x2},
                       {"assign_u", s.assign_u},
                       {"r0_mean", s.r0_mean},
                       {"r0_x1", s.r0_x1},
                       {"r0_sd", s.r0_sd},
                       {"slope_mean", s.slope_mean},
                       {"slope_x1", s.slope_x1},
                       {"slope_x2", s.slope_x2},
                       {"slope_sd", s.slope_sd},
                       {"slope_u", s.slope_u},
                       {"noise_sd", s.noise_sd},
                       {"effect_scale", to_string(s.effect_scale)},
                       {"effect", s.effect},
                       {"group_effects", s.group_effects},
                       {"delay_days", s.delay_days},
                       {"confounding_leak", s.confounding_leak},
                       {"delayed_effect", s.delayed_effect},
                       {"interference", s.interference},
                       {"interference_strength", s.interference_strength},
                       {"rate_lo", s.rate_lo},
                       {"rate_hi", s.rate_hi},
                       {"rate_knot_spacing", s.rate_knot_spacing},
                       {"survival_rate", s.survival_rate},
                       {"seed_cases", s.seed_cases}};
}

void from_json(const nlohmann::json& j, ScenarioSpec& s) {
    if (!j.is_object()) throw InputError("scenario must be a JSON object");
    const nlohmann::json defaults = ScenarioSpec{};
    for (const auto& [key, value] : j.items())
        if (!defaults.contains(key)) throw InputError("unknown scenario field '" + key + "'");
    auto get = [&](const char* key, auto& field) {
        if (!j.contains(key)) return;
        try {
            j.at(key).get_to(field);
        } catch (const nlohmann::json::exception&) {
            throw InputError(std::string("scenario field '") + key + "' has the wrong type");
        }
    };
    get("n_regions", s.n_regions);
    get("horizon", s.horizon);
    get("seed", s.seed);
    get("intervention", s.intervention);
    get("decision_days", s.decision_days);
    get("assign_intercept", s.assign_intercept);
    get("assign_rt", s.assign_rt);
    get("assign_x1", s.assign_x1);
    get("assign_x2", s.assign_x2);
    get("assign_u", s.assign_u);
    get("r0_mean", s.r0_mean);
    get("r0_x1", s.r0_x1);
    get("r0_sd", s.r0_sd);
    get("slope_mean", s.slope_mean);
    get("slope_x1", s.slope_x1);
    get("slope_x2", s.slope_x2);
    get("slope_sd", s.slope_sd);
    get("slope_u", s.slope_u);
    get("noise_sd", s.noise_sd);
    if (j.contains("effect_scale")) {
        std::string scale;
        get("effect_scale", scale);
        if (scale == "rt") s.effect_scale = EffectScale::rt;
        else if (scale == "rate") s.effect_scale = EffectScale::rate;
        else throw InputError("effect_scale must be 'rt' or 'rate'");
    }
    get("effect", s.effect);
    get("group_effects", s.group_effects);
    get("delay_days", s.delay_days);
    get("confounding_leak", s.confounding_leak);
    get("delayed_effect", s.delayed_effect);
    get("interference", s.interference);
    get("interference_strength", s.interference_strength);
    get("rate_lo", s.rate_lo);
    get("rate_hi", s.rate_hi);
    get("rate_knot_spacing", s.rate_knot_spacing);
    get("survival_rate", s.survival_rate);
    get("seed_cases", s.seed_cases);
}

SyntheticData generate(const ScenarioSpec& spec) {
    validate(spec);
    const int n = spec.n_regions;
    const int H = spec.horizon;
    std::mt19937_64 rng(spec.seed);
    std::mt19937_64 count_rng(splitmix64(spec.seed ^ 0xC0FFEEULL));
    std::normal_distribution<double> z;
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    std::vector<int> days = spec.decision_days;
    std::sort(days.begin(), days.end());
    days.erase(std::unique(days.begin(), days.end()), days.end());

    std::vector<RegionDraws> draws(static_cast<std::size_t>(n));
    for (auto& d : draws) {
        d.x1 = z(rng);
        d.x2 = z(rng);
        d.u = z(rng);
        d.level = z(rng);
        d.slope = z(rng);
        d.noise.resize(static_cast<std::size_t>(H));
        for (auto& e : d.noise) e = z(rng);
        if (spec.effect_scale == EffectScale::rate) {
            const int knots = H / std::max(1, spec.rate_knot_spacing) + 2;
            for (int k = 0; k < knots; ++k) d.rate_knots.push_back(spec.rate_lo + (spec.rate_hi - spec.rate_lo) * unif(rng));
        }
    }
    std::vector<std::vector<double>> adoption_u(static_cast<std::size_t>(n), std::vector<double>(days.size()));
    for (auto& row : adoption_u)
        for (auto& v : row) v = unif(rng);

    Truth truth;
    truth.adoption_day.assign(static_cast<std::size_t>(n), std::nullopt);
    truth.group.assign(static_cast<std::size_t>(n), 0);
    truth.region_effect.assign(static_cast<std::size_t>(n), spec.effect);
    for (int i = 0; i < n; ++i) {
        const auto& d = draws[static_cast<std::size_t>(i)];
        truth.x1.push_back(d.x1);
        truth.x2.push_back(d.x2);
        truth.u.push_back(d.u);
        if (!spec.group_effects.empty()) {
            truth.group[static_cast<std::size_t>(i)] = i % static_cast<int>(spec.group_effects.size());
            truth.region_effect[static_cast<std::size_t>(i)] = spec.group_effects[static_cast<std::size_t>(truth.group[static_cast<std::size_t>(i)])];
        }
    }
    truth.adoption_probability.assign(static_cast<std::size_t>(n),
                                      std::vector<double>(days.size(), std::numeric_limits<double>::quiet_NaN()));
    truth.untreated_rt.assign(static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(H)));

    const auto survival = SurvivalSpec::exponential(spec.survival_rate);
    const auto si = SerialIntervalPmf::discretized_gamma(4.7, 2.9);
    const bool leak = spec.confounding_leak;

    auto base_rate = [&](int i, int t) {
        const auto& d = draws[static_cast<std::size_t>(i)];
        const double pos = static_cast<double>(t) / spec.rate_knot_spacing;
        const auto k = static_cast<std::size_t>(pos);
        const double w = pos - static_cast<double>(k);
        double a = d.rate_knots[k] * (1 - w) + d.rate_knots[k + 1] * w;
        a *= std::exp(0.05 * d.x1 - 0.0005 * d.x1 * t);
        if (leak) a *= std::exp(-0.001 * d.u * t);
        return a;
    };
    auto untreated_r = [&](int i, int t) {
        const auto& d = draws[static_cast<std::size_t>(i)];
        const double level = spec.r0_mean + spec.r0_x1 * d.x1 + spec.r0_sd * d.level;
        double slope = spec.slope_mean + spec.slope_x1 * d.x1 + spec.slope_x2 * d.x2 + spec.slope_sd * d.slope;
        if (leak) slope += spec.slope_u * d.u;
        return level + slope * t + spec.noise_sd * d.noise[static_cast<std::size_t>(t)];
    };

    // Observed trajectories, built day by day so adoption can condition on the history.
    std::vector<std::vector<double>> r(static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(H)));
    std::vector<std::vector<double>> cases(static_cast<std::size_t>(n));
    std::vector<std::vector<double>> cases0(static_cast<std::size_t>(n));   // rate mode, untreated
    for (int i = 0; i < n; ++i) {
        cases[static_cast<std::size_t>(i)].push_back(spec.seed_cases);
        cases0[static_cast<std::size_t>(i)].push_back(spec.seed_cases);
    }
    auto rate_r = [&](const std::vector<double>& c, int t) {
        CompensatedSum denom;
        for (int k = 1; k <= std::min(t, si.max_lag()); ++k) denom += si[k] * c[static_cast<std::size_t>(t - k)];
        return denom.value() > 1e-12 ? c[static_cast<std::size_t>(t)] / denom.value() : 1.0;
    };

    std::size_t next_decision = 0;
    for (int t = 0; t < H; ++t) {
        if (next_decision < days.size() && days[next_decision] == t) {
            for (int i = 0; i < n; ++i) {
                if (truth.adoption_day[static_cast<std::size_t>(i)]) continue;
                double h = 0;
                for (int s = t - 7; s < t; ++s) h += r[static_cast<std::size_t>(i)][static_cast<std::size_t>(s)] / 7.0;
                const auto& d = draws[static_cast<std::size_t>(i)];
                double eta = spec.assign_intercept + spec.assign_rt * (h - 1.0) + spec.assign_x1 * d.x1 + spec.assign_x2 * d.x2;
                if (leak) eta += spec.assign_u * d.u;
                const double p = expit(eta);
                truth.adoption_probability[static_cast<std::size_t>(i)][next_decision] = p;
                if (adoption_u[static_cast<std::size_t>(i)][next_decision] < p) truth.adoption_day[static_cast<std::size_t>(i)] = t;
            }
            ++next_decision;
        }
        for (int i = 0; i < n; ++i) {
            const auto ui = static_cast<std::size_t>(i);
            const auto& T = truth.adoption_day[ui];
            const double own = T ? truth.region_effect[ui] * ramp(spec, t - *T) : 0.0;
            const double spill = spillover(spec, truth.adoption_day, truth.region_effect, i, t);
            if (spec.effect_scale == EffectScale::rt) {
                const double r0 = untreated_r(i, t) + spill;
                truth.untreated_rt[ui][static_cast<std::size_t>(t)] = r0;
                r[ui][static_cast<std::size_t>(t)] = r0 + own;
            } else {
                const double noise = spec.noise_sd * draws[ui].noise[static_cast<std::size_t>(t)];
                r[ui][static_cast<std::size_t>(t)] = rate_r(cases[ui], t) + noise;
                truth.untreated_rt[ui][static_cast<std::size_t>(t)] = rate_r(cases0[ui], t) + noise;
                // a(t) drives N(t + 1); an adoption on day T first changes N(T + 1)
                const double a0 = std::max(0.0, base_rate(i, t) + spill);
                const double a1 = T && t >= *T ? std::max(0.0, a0 + truth.region_effect[ui] * ramp(spec, t - *T + 1)) : a0;
                cases[ui].push_back(convolve_step(cases[ui], survival, a1));
                cases0[ui].push_back(convolve_step(cases0[ui], survival, a0));
            }
        }
    }

    // R_t-scale counts follow the renewal equation with Poisson noise.
    if (spec.effect_scale == EffectScale::rt) {
        for (int i = 0; i < n; ++i) {
            auto& c = cases[static_cast<std::size_t>(i)];
            c.assign(static_cast<std::size_t>(H), 0.0);
            for (int t = 0; t < H; ++t) {
                if (t < 7) {
                    c[static_cast<std::size_t>(t)] = spec.seed_cases;
                    continue;
                }
                double mean = 0;
                for (int k = 1; k <= std::min(t, si.max_lag()); ++k) mean += si[k] * c[static_cast<std::size_t>(t - k)];
                mean *= std::max(0.0, r[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)]);
                c[static_cast<std::size_t>(t)] = mean > 0 ? static_cast<double>(std::poisson_distribution<long long>(mean)(count_rng)) : 0.0;
            }
        }
    } else {
        for (auto& c : cases) c.resize(static_cast<std::size_t>(H));
    }

    // True gamma(delta): average effect on the change over every (event, at-risk region) pair.
    truth.gamma.assign(kMaxDelta + 1, 0.0);
    std::map<std::pair<int, int>, std::vector<double>> treated_path;   // (region, day) -> R_t if adopting that day
    auto effect_on_change = [&](int i, int tj, int delta) {
        if (spec.effect_scale == EffectScale::rt) return truth.region_effect[static_cast<std::size_t>(i)] * ramp(spec, delta);
        auto key = std::make_pair(i, tj);
        auto it = treated_path.find(key);
        if (it == treated_path.end()) {
            std::vector<double> c{spec.seed_cases};
            std::vector<double> path(static_cast<std::size_t>(H));
            for (int t = 0; t < H; ++t) {
                path[static_cast<std::size_t>(t)] = rate_r(c, t);
                const double a0 = std::max(0.0, base_rate(i, t) + spillover(spec, truth.adoption_day, truth.region_effect, i, t));
                const double a1 = t >= tj ? std::max(0.0, a0 + truth.region_effect[static_cast<std::size_t>(i)] * ramp(spec, t - tj + 1)) : a0;
                c.push_back(convolve_step(c, survival, a1));
            }
            it = treated_path.emplace(key, std::move(path)).first;
        }
        const auto& base = cases0[static_cast<std::size_t>(i)];
        const double treated = it->second[static_cast<std::size_t>(tj + delta)] - it->second[static_cast<std::size_t>(tj)];
        const double untreated = rate_r(base, tj + delta) - rate_r(base, tj);
        return treated - untreated;
    };
    for (int delta = 0; delta <= kMaxDelta; ++delta) {
        CompensatedSum sum;
        long rows = 0;
        for (int j = 0; j < n; ++j) {
            const auto& Tj = truth.adoption_day[static_cast<std::size_t>(j)];
            if (!Tj || *Tj + delta >= H) continue;
            for (int i = 0; i < n; ++i) {
                const auto& Ti = truth.adoption_day[static_cast<std::size_t>(i)];
                if (Ti && *Ti < *Tj) continue;
                sum += effect_on_change(i, *Tj, delta);
                ++rows;
            }
        }
        truth.gamma[static_cast<std::size_t>(delta)] = rows ? sum.value() / static_cast<double>(rows) : 0.0;
    }

    SyntheticData out;
    out.truth = std::move(truth);
    for (int i = 0; i < n; ++i) {
        const auto ui = static_cast<std::size_t>(i);
        RegionRecord rec;
        char id[16];
        std::snprintf(id, sizeof id, "R%03d", i);
        rec.region_id = id;
        rec.origin_date = Date{std::chrono::days{18322}};   // 2020-03-01
        rec.baseline["x1"] = draws[ui].x1;
        rec.baseline["x2"] = draws[ui].x2;
        rec.baseline["group"] = static_cast<double>(out.truth.group[ui]);
        rec.rt.assign(r[ui].begin(), r[ui].end());
        rec.daily["new_cases"] = Series(cases[ui].begin(), cases[ui].end());
        if (out.truth.adoption_day[ui]) rec.intervention_days[spec.intervention] = *out.truth.adoption_day[ui];
        out.records.push_back(std::move(rec));
    }
    return out;
}

AnalysisOptions synthetic_analysis() {
    AnalysisOptions opt;
    opt.screen_k = 0;
    opt.covariates = {history_name("rt"), "x1", "x2"};
    return opt;
}

std::uint64_t replicate_seed(std::uint64_t seed, std::uint64_t replicate) {
    return splitmix64(splitmix64(seed) + replicate);
}

namespace {

Estimate mean_of(const std::vector<double>& v) {
    const double m = static_cast<double>(v.size());
    CompensatedSum s;
    for (double x : v) s += x;
    const double mean = s.value() / m;
    CompensatedSum ss;
    for (double x : v) ss += (x - mean) * (x - mean);
    const double var = v.size() > 1 ? ss.value() / (m - 1) : 0.0;
    return {mean, std::sqrt(var / m)};
}

// Sample variance with the large-sample standard error sqrt((m4 - s^4 (m-3)/(m-1)) / m).
Estimate variance_of(const std::vector<double>& v) {
    const double m = static_cast<double>(v.size());
    const double mean = mean_of(v).value;
    CompensatedSum s2, s4;
    for (double x : v) {
        const double e = (x - mean) * (x - mean);
        s2 += e;
        s4 += e * e;
    }
    const double var = s2.value() / (m - 1);
    const double m4 = s4.value() / m;
    const double se2 = (m4 - var * var * (m - 3) / (m - 1)) / m;
    return {var, std::sqrt(std::max(se2, 0.0))};
}

Estimate proportion(const std::vector<double>& flags) {
    const double p = mean_of(flags).value;
    return {p, std::sqrt(p * (1 - p) / static_cast<double>(flags.size()))};
}

template <class Fn>
void for_replicates(int replicates, Execution execution, Fn&& fn) {
    if (execution == Execution::parallel) {
#pragma omp parallel for schedule(dynamic)
        for (int rep = 0; rep < replicates; ++rep) fn(rep);
    } else {
        for (int rep = 0; rep < replicates; ++rep) fn(rep);
    }
}

void check_study(int replicates, int delta) {
    if (replicates < 100) throw InputError("a study needs at least 100 replicates");
    if (delta < 1 || delta > kMaxDelta) throw InputError("delta must be within [1, 30]");
}

}  // namespace

CoverageSummary coverage_study(const ScenarioSpec& spec, int replicates, int delta, const AnalysisOptions& options,
                               Execution execution) {
    check_study(replicates, delta);
    validate(spec);
    CoverageSummary out;
    out.replicates = replicates;
    out.delta = delta;
    out.results.resize(static_cast<std::size_t>(replicates));
    for_replicates(replicates, execution, [&](int rep) {
        ReplicateResult& res = out.results[static_cast<std::size_t>(rep)];
        try {
            ScenarioSpec s = spec;
            s.seed = replicate_seed(spec.seed, static_cast<std::uint64_t>(rep));
            const auto data = generate(s);
            const auto a = analyze(data.records, s.intervention, delta, options);
            res.gamma_hat = a.ate.gamma_hat;
            res.sigma2_hat = a.ate.sigma2_hat;
            res.truth = data.truth.gamma[static_cast<std::size_t>(delta)];
            res.covered = a.ate.ci_lo <= res.truth && res.truth <= a.ate.ci_hi;
            res.rejects_zero = a.ate.ci_lo > 0 || a.ate.ci_hi < 0;
            res.ok = true;
        } catch (const std::exception& e) {
            res.error = e.what();
        }
    });

    std::vector<double> g, t, b, s2, cov, rej;
    for (const auto& r : out.results) {
        if (!r.ok) {
            ++out.failures;
            continue;
        }
        g.push_back(r.gamma_hat);
        t.push_back(r.truth);
        b.push_back(r.gamma_hat - r.truth);
        s2.push_back(r.sigma2_hat);
        cov.push_back(r.covered ? 1.0 : 0.0);
        rej.push_back(r.rejects_zero ? 1.0 : 0.0);
    }
    if (g.size() < 2)
        throw EstimationError(EstimationErrorKind::degenerate_scenario, "fewer than 2 replicates succeeded");
    out.mean_gamma = mean_of(g);
    out.truth = mean_of(t);
    out.bias = mean_of(b);
    out.empirical_variance = variance_of(g);
    out.mean_sigma2 = mean_of(s2);
    out.coverage = proportion(cov);
    out.rejection_rate = proportion(rej);
    return out;
}

HteSummary hte_study(const ScenarioSpec& spec, int replicates, int delta, const AnalysisOptions& options,
                     Execution execution) {
    check_study(replicates, delta);
    validate(spec);
    if (spec.group_effects.size() < 2) throw InputError("hte_study needs at least two group_effects");
    const auto groups = static_cast<Eigen::Index>(spec.group_effects.size());
    HteSummary out;
    out.replicates = replicates;
    out.results.resize(static_cast<std::size_t>(replicates));
    for_replicates(replicates, execution, [&](int rep) {
        HteReplicate& res = out.results[static_cast<std::size_t>(rep)];
        try {
            ScenarioSpec s = spec;
            s.seed = replicate_seed(spec.seed, static_cast<std::uint64_t>(rep));
            const auto data = generate(s);
            const auto a = analyze(data.records, s.intervention, delta, options);
            std::map<std::string, int> group_of;
            for (std::size_t i = 0; i < data.records.size(); ++i) group_of[data.records[i].region_id] = data.truth.group[i];
            Moderators m;
            for (Eigen::Index g = 0; g < groups; ++g) m.names.push_back("group" + std::to_string(g + 1));
            m.z = Eigen::MatrixXd::Zero(a.sample.n_regions(), groups);
            for (int i = 0; i < a.sample.n_regions(); ++i) m.z(i, group_of.at(a.sample.region_ids[static_cast<std::size_t>(i)])) = 1.0;
            const auto h = estimate_hte(a.sample, a.fit, m);
            res.theta = h.theta;
            res.se = h.psi.diagonal().cwiseMax(0.0).cwiseSqrt();
            for (Eigen::Index g = 0; g < groups; ++g) res.rejects.push_back(h.rejects(g));
            res.ok = true;
        } catch (const std::exception& e) {
            res.error = e.what();
        }
    });
    const double ramp_delta = ramp(spec, delta);
    for (Eigen::Index g = 0; g < groups; ++g) {
        std::vector<double> th, rj;
        for (const auto& r : out.results) {
            if (!r.ok) continue;
            th.push_back(r.theta[g]);
            rj.push_back(r.rejects[static_cast<std::size_t>(g)] ? 1.0 : 0.0);
        }
        if (th.size() < 2)
            throw EstimationError(EstimationErrorKind::degenerate_scenario, "fewer than 2 replicates succeeded");
        out.mean_theta.push_back(mean_of(th));
        out.power.push_back(proportion(rj));
        out.truth.push_back(spec.group_effects[static_cast<std::size_t>(g)] * ramp_delta);
    }
    for (const auto& r : out.results)
        if (!r.ok) ++out.failures;
    return out;
}

}  // namespace rtcausal
