#pragma once

#include "rtcausal/design.hpp"

#include <random>
#include <string>
#include <vector>

namespace fixtures {

struct RawRow {
    int region;
    int event;
    bool treated;
    double outcome;
    std::vector<double> x;   // without intercept
};

// Builds an estimation sample directly from rows. Event e's case region is the first treated row's region.
inline rtcausal::EstimationSample raw_sample(const std::vector<RawRow>& rows, int n_regions, int n_events,
                                             std::vector<std::string> names = {}) {
    rtcausal::EstimationSample s;
    const std::size_t k = rows.empty() ? 0 : rows[0].x.size();
    s.covariate_names.push_back(rtcausal::kIntercept);
    for (std::size_t c = 0; c < k; ++c) s.covariate_names.push_back(c < names.size() ? names[c] : "x" + std::to_string(c + 1));
    for (int i = 0; i < n_regions; ++i) s.region_ids.push_back("r" + std::to_string(i));
    s.event_case_region.assign(static_cast<std::size_t>(n_events), -1);
    for (int e = 0; e < n_events; ++e) s.event_day.push_back(10 + e);
    s.x.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(k + 1));
    s.treated.resize(static_cast<Eigen::Index>(rows.size()));
    s.outcome.resize(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto i = static_cast<Eigen::Index>(r);
        s.x(i, 0) = 1.0;
        for (std::size_t c = 0; c < k; ++c) s.x(i, static_cast<Eigen::Index>(c + 1)) = rows[r].x[c];
        s.treated[i] = rows[r].treated ? 1.0 : 0.0;
        s.outcome[i] = rows[r].outcome;
        s.region.push_back(rows[r].region);
        s.event.push_back(rows[r].event);
        auto& cr = s.event_case_region[static_cast<std::size_t>(rows[r].event)];
        if (rows[r].treated && cr < 0) cr = rows[r].region;
    }
    return s;
}

// Random staggered-adoption regions with one baseline covariate driving adoption and outcome.
inline std::vector<rtcausal::RegionRecord> random_records(std::mt19937_64& rng, int n, int extra_covariates = 0,
                                                          double effect = 0.0) {
    std::normal_distribution<double> z;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<rtcausal::RegionRecord> out;
    for (int i = 0; i < n; ++i) {
        rtcausal::RegionRecord r;
        r.region_id = "S" + std::to_string(100 + i);
        const double x1 = z(rng);
        r.baseline["x1"] = x1;
        for (int c = 0; c < extra_covariates; ++c) r.baseline["e" + std::to_string(c)] = z(rng);
        const double rate = 0.04 * std::exp(0.5 * x1);
        const double t = -std::log(1.0 - u(rng)) / rate;
        std::optional<int> T;
        if (t < 60) T = 5 + static_cast<int>(t);
        if (T) r.intervention_days["lockdown"] = *T;
        const double base = 1.2 + 0.1 * x1;
        const double slope = -0.004 + 0.002 * x1;
        r.rt.resize(90);
        for (int d = 0; d < 90; ++d) r.rt[d] = base + slope * d + 0.03 * z(rng) + (T && d > *T ? effect : 0.0);
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace fixtures
