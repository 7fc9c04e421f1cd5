#include "rtcausal/design.hpp"

#include "rtcausal/epi_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace rtcausal {

const char* to_string(EstimationErrorKind kind) {
    switch (kind) {
        case EstimationErrorKind::degenerate_fit: return "degenerate_fit";
        case EstimationErrorKind::insufficient_design: return "insufficient_design";
        case EstimationErrorKind::separation: return "separation";
        case EstimationErrorKind::rank_deficiency: return "rank_deficiency";
        case EstimationErrorKind::insufficient_arm: return "insufficient_arm";
        case EstimationErrorKind::collinear_moderator: return "collinear_moderator";
        case EstimationErrorKind::degenerate_scenario: return "degenerate_scenario";
    }
    return "unknown";
}

const char* to_string(Arm arm) {
    switch (arm) {
        case Arm::treated: return "treated";
        case Arm::control: return "control";
        case Arm::excluded: return "excluded";
    }
    return "unknown";
}

// ---- alignment ----

namespace {

Series shift_series(const Series& s, int shift) {
    // Drops the first `shift` entries (or pads with missing when shift < 0).
    Series out;
    if (shift >= 0) {
        if (static_cast<std::size_t>(shift) < s.size()) out.assign(s.begin() + shift, s.end());
    } else {
        out.assign(static_cast<std::size_t>(-shift), std::nullopt);
        out.insert(out.end(), s.begin(), s.end());
    }
    return out;
}

}  // namespace

AlignmentResult align_regions(std::span<const CalendarRecord> regions) {
    AlignmentResult result;
    for (const auto& cal : regions) {
        RegionRecord rec;
        rec.region_id = cal.region_id;
        rec.origin_date = cal.first_case;
        rec.baseline = cal.baseline;
        const int shift = days_between(cal.series_start, cal.first_case);
        for (const auto& [name, series] : cal.daily) rec.daily[name] = shift_series(series, shift);
        rec.rt = shift_series(cal.rt, shift);
        for (const auto& [name, date] : cal.interventions) {
            const int day = days_between(cal.first_case, date);
            if (day < 0) {
                rec.excluded_interventions.insert(name);
                result.exclusions.push_back({cal.region_id, name, "intervention_before_first_case"});
            } else {
                rec.intervention_days[name] = day;
            }
        }
        result.records.push_back(std::move(rec));
    }
    return result;
}

// ---- design table ----

std::size_t DesignTable::count(Arm arm) const {
    return static_cast<std::size_t>(std::count_if(rows.begin(), rows.end(), [&](const DesignRow& r) { return r.arm == arm; }));
}

std::size_t DesignTable::missing_outcome_rows() const {
    return static_cast<std::size_t>(std::count_if(
        rows.begin(), rows.end(), [](const DesignRow& r) { return r.arm != Arm::excluded && !r.outcome; }));
}

std::string history_name(const std::string& series) { return series + "_7d"; }

namespace {

std::optional<double> history_average(const Series& s, int day, int window, int min_days) {
    double sum = 0.0;
    int used = 0;
    for (int t = day - window; t < day; ++t) {
        if (t < 0 || t >= static_cast<int>(s.size())) continue;
        const auto& v = s[static_cast<std::size_t>(t)];
        if (v && std::isfinite(*v)) {
            sum += *v;
            ++used;
        }
    }
    if (used < min_days) return std::nullopt;
    return sum / used;
}

constexpr int kNever = std::numeric_limits<int>::max();

}  // namespace

DesignTable build_design(std::span<const RegionRecord> records, const std::string& intervention, int delta,
                         const DesignOptions& options) {
    if (delta < 1) throw InputError("delta must be at least one day");

    // Canonical order makes the table independent of input order.
    std::vector<const RegionRecord*> regions;
    for (const auto& r : records)
        if (!r.excluded_interventions.contains(intervention)) regions.push_back(&r);
    std::sort(regions.begin(), regions.end(),
              [](const RegionRecord* a, const RegionRecord* b) { return a->region_id < b->region_id; });
    for (std::size_t i = 1; i < regions.size(); ++i)
        if (regions[i]->region_id == regions[i - 1]->region_id)
            throw InputError("duplicate region '" + regions[i]->region_id + "'");

    DesignTable table;
    table.intervention = intervention;
    table.delta = delta;
    table.strict = options.strict;
    for (const auto& r : records)
        if (r.excluded_interventions.contains(intervention))
            table.exclusions.push_back({r.region_id, intervention, "intervention_before_first_case"});

    std::set<std::string> daily_names, baseline_names;
    for (const auto* r : regions) {
        for (const auto& [name, _] : r->daily) daily_names.insert(name);
        for (const auto& [name, _] : r->baseline) baseline_names.insert(name);
    }
    std::vector<std::string> daily_list(daily_names.begin(), daily_names.end());
    table.covariate_names.push_back(history_name("rt"));
    for (const auto& n : daily_list) table.covariate_names.push_back(history_name(n));
    table.time_varying_count = table.covariate_names.size();
    for (const auto& n : baseline_names) table.covariate_names.push_back(n);

    std::vector<int> T(regions.size(), kNever);
    for (std::size_t i = 0; i < regions.size(); ++i) {
        table.region_ids.push_back(regions[i]->region_id);
        if (auto it = regions[i]->intervention_days.find(intervention); it != regions[i]->intervention_days.end())
            T[i] = it->second;
    }

    std::vector<std::size_t> case_order;
    for (std::size_t i = 0; i < regions.size(); ++i)
        if (T[i] != kNever) case_order.push_back(i);
    if (case_order.size() < 2)
        throw EstimationError(EstimationErrorKind::insufficient_design,
                              "intervention '" + intervention + "' has fewer than 2 events");
    std::stable_sort(case_order.begin(), case_order.end(), [&](std::size_t a, std::size_t b) { return T[a] < T[b]; });

    auto other_in_window = [&](const RegionRecord& r, int start) {
        for (const auto& [name, day] : r.intervention_days)
            if (name != intervention && day > start && day <= start + delta) return true;
        return false;
    };

    for (std::size_t j : case_order) {
        const int Tj = T[j];
        std::vector<DesignRow> rows;
        std::size_t controls = 0;
        for (std::size_t i = 0; i < regions.size(); ++i) {
            if (T[i] < Tj) continue;
            const RegionRecord& r = *regions[i];
            DesignRow row;
            row.region = i;
            row.arm = (T[i] <= Tj + delta) ? Arm::treated : Arm::control;
            if (options.strict && other_in_window(r, Tj)) {
                row.arm = Arm::excluded;
                row.exclusion = "other_intervention_in_window";
            }
            row.outcome = outcome_change(r.rt, Tj, delta);
            row.covariates.reserve(table.covariate_names.size());
            row.covariates.push_back(history_average(r.rt, Tj, options.history_window, options.history_min_days));
            for (const auto& name : daily_list) {
                auto it = r.daily.find(name);
                row.covariates.push_back(it == r.daily.end() ? std::nullopt
                                                             : history_average(it->second, Tj, options.history_window,
                                                                               options.history_min_days));
            }
            for (const auto& name : baseline_names) {
                auto it = r.baseline.find(name);
                row.covariates.push_back(it == r.baseline.end() ? std::nullopt : it->second);
            }
            if (row.arm == Arm::control) ++controls;
            rows.push_back(std::move(row));
        }
        const std::string label = regions[j]->region_id + "@" + std::to_string(Tj);
        if (controls == 0) {
            table.exclusions.push_back({label, intervention, "event_without_controls"});
            continue;
        }
        const std::size_t e = table.events.size();
        table.events.push_back({j, Tj});
        for (auto& row : rows) {
            row.event = e;
            if (row.arm != Arm::excluded && !row.outcome)
                table.exclusions.push_back({table.region_ids[row.region], label, "missing_outcome"});
            table.rows.push_back(std::move(row));
        }
    }
    if (table.events.empty())
        throw EstimationError(EstimationErrorKind::insufficient_design,
                              "intervention '" + intervention + "' has no event with an eligible control at delta " +
                                  std::to_string(delta));
    return table;
}

// ---- screening ----

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(v.size());
    std::size_t i = 0;
    while (i < idx.size()) {
        std::size_t j = i;
        while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

}  // namespace

std::optional<double> spearman(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.size() < 2) return std::nullopt;
    const auto ra = average_ranks(a);
    const auto rb = average_ranks(b);
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
    const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        sab += (ra[i] - ma) * (rb[i] - mb);
        saa += (ra[i] - ma) * (ra[i] - ma);
        sbb += (rb[i] - mb) * (rb[i] - mb);
    }
    if (saa <= 0.0 || sbb <= 0.0) return std::nullopt;
    return sab / std::sqrt(saa * sbb);
}

ScreeningReport screen_covariates(const DesignTable& table, int k, double missing_threshold) {
    if (k < 1) throw InputError("screening size k must be at least 1");
    ScreeningReport report;
    const std::size_t p = table.covariate_names.size();
    if (p == 0) return report;

    std::vector<const DesignRow*> usable;
    for (const auto& r : table.rows)
        if (r.arm != Arm::excluded) usable.push_back(&r);

    for (std::size_t c = 0; c < p; ++c) {
        const std::string& name = table.covariate_names[c];
        std::map<std::size_t, std::pair<int, int>> per_region;  // region -> (rows, missing rows)
        std::vector<double> values, treated;
        std::size_t missing_rows = 0;
        for (const auto* r : usable) {
            auto& pr = per_region[r->region];
            ++pr.first;
            if (r->covariates[c]) {
                values.push_back(*r->covariates[c]);
                treated.push_back(r->arm == Arm::treated ? 1.0 : 0.0);
            } else {
                ++missing_rows;
                ++pr.second;
            }
        }
        const double row_frac = usable.empty() ? 1.0 : static_cast<double>(missing_rows) / usable.size();
        std::size_t regions_missing = 0;
        for (const auto& [_, pr] : per_region) regions_missing += pr.first == pr.second;
        const double region_frac = per_region.empty() ? 1.0 : static_cast<double>(regions_missing) / per_region.size();
        const double frac = std::max(row_frac, region_frac);
        if (frac > missing_threshold) {
            report.excluded_missing.emplace_back(name, frac);
            continue;
        }
        CovariateScreen s;
        s.name = name;
        s.missing_fraction = frac;
        s.spearman = spearman(values, treated);
        s.constant = !s.spearman && !values.empty() &&
                     std::all_of(values.begin(), values.end(), [&](double v) { return v == values.front(); });
        report.ranked.push_back(std::move(s));
    }
    if (report.ranked.empty())
        throw InputError("intervention '" + table.intervention +
                         "': every candidate covariate exceeds the missingness threshold");

    std::stable_sort(report.ranked.begin(), report.ranked.end(), [](const CovariateScreen& a, const CovariateScreen& b) {
        if (a.spearman.has_value() != b.spearman.has_value()) return a.spearman.has_value();
        if (!a.spearman) return false;
        return std::abs(*a.spearman) > std::abs(*b.spearman);
    });
    for (const auto& s : report.ranked) {
        if (static_cast<int>(report.selected.size()) >= k || !s.spearman) break;
        report.selected.push_back(s.name);
    }
    return report;
}

// ---- estimation sample ----

EstimationSample make_sample(const DesignTable& table, std::span<const std::string> covariates) {
    std::vector<std::size_t> cols;
    for (const auto& name : covariates) {
        auto it = std::find(table.covariate_names.begin(), table.covariate_names.end(), name);
        if (it == table.covariate_names.end()) throw InputError("unknown covariate '" + name + "'");
        cols.push_back(static_cast<std::size_t>(it - table.covariate_names.begin()));
    }

    EstimationSample s;
    s.covariate_names.push_back(kIntercept);
    for (const auto& name : covariates) s.covariate_names.push_back(name);

    std::vector<const DesignRow*> kept;
    for (const auto& r : table.rows) {
        if (r.arm == Arm::excluded) {
            ++s.dropped_excluded;
            continue;
        }
        if (!r.outcome) {
            ++s.dropped_missing_outcome;
            continue;
        }
        if (std::any_of(cols.begin(), cols.end(), [&](std::size_t c) { return !r.covariates[c]; })) {
            ++s.dropped_missing_covariate;
            continue;
        }
        kept.push_back(&r);
    }

    std::map<std::size_t, int> region_index, event_index;
    for (const auto* r : kept) {
        region_index.emplace(r->region, 0);
        event_index.emplace(r->event, 0);
    }
    int next = 0;
    for (auto& [orig, idx] : region_index) {
        idx = next++;
        s.region_ids.push_back(table.region_ids[orig]);
    }
    next = 0;
    for (auto& [orig, idx] : event_index) {
        idx = next++;
        const auto& ev = table.events[orig];
        s.event_day.push_back(ev.day);
        auto it = region_index.find(ev.case_region);
        s.event_case_region.push_back(it == region_index.end() ? -1 : it->second);
    }

    const auto n = static_cast<Eigen::Index>(kept.size());
    const auto p = static_cast<Eigen::Index>(s.covariate_names.size());
    s.x.resize(n, p);
    s.treated.resize(n);
    s.outcome.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const DesignRow& r = *kept[static_cast<std::size_t>(i)];
        s.x(i, 0) = 1.0;
        for (std::size_t c = 0; c < cols.size(); ++c) s.x(i, static_cast<Eigen::Index>(c) + 1) = *r.covariates[cols[c]];
        s.treated[i] = r.arm == Arm::treated ? 1.0 : 0.0;
        s.outcome[i] = *r.outcome;
        s.region.push_back(region_index.at(r.region));
        s.event.push_back(event_index.at(r.event));
    }
    return s;
}

// ---- standardization ----

StandardizationRules StandardizationRules::defaults() {
    StandardizationRules rules;
    rules.daily["new_cases"] = Scaling::per_100k_total;
    rules.daily["new_deaths"] = Scaling::per_100k_total;
    rules.baseline["unemployed"] = Scaling::percent_of_working_age;
    for (const char* name : {"below_poverty", "no_high_school_diploma", "limited_english", "multi_unit_housing",
                             "mobile_homes", "crowded_households", "no_vehicle", "group_quarters", "disability",
                             "single_parent_households"})
        rules.baseline[name] = Scaling::percent_of_total;
    rules.baseline["per_capita_income"] = Scaling::unscaled;
    return rules;
}

namespace {

double scale_factor(Scaling rule, const PopulationRecord& pop, const std::string& region, const std::string& name) {
    switch (rule) {
        case Scaling::unscaled: return 1.0;
        case Scaling::per_100k_total: return 1e5 / pop.total;
        case Scaling::percent_of_total: return 100.0 / pop.total;
        case Scaling::percent_of_working_age:
            if (!pop.working_age || !(*pop.working_age > 0.0))
                throw InputError("region '" + region + "': working-age population needed to standardize '" + name + "'");
            return 100.0 / *pop.working_age;
    }
    return 1.0;
}

}  // namespace

std::vector<RegionRecord> standardize(std::vector<RegionRecord> records,
                                      const std::map<std::string, PopulationRecord>& population,
                                      const StandardizationRules& rules) {
    for (auto& r : records) {
        auto it = population.find(r.region_id);
        if (it == population.end()) throw InputError("missing population for region '" + r.region_id + "'");
        const PopulationRecord& pop = it->second;
        if (!(pop.total > 0.0)) throw InputError("population must be positive for region '" + r.region_id + "'");
        for (auto& [name, series] : r.daily) {
            auto rule = rules.daily.find(name);
            if (rule == rules.daily.end()) continue;
            const double f = scale_factor(rule->second, pop, r.region_id, name);
            for (auto& v : series)
                if (v) *v *= f;
        }
        for (auto& [name, value] : r.baseline) {
            auto rule = rules.baseline.find(name);
            if (rule == rules.baseline.end() || !value) continue;
            *value *= scale_factor(rule->second, pop, r.region_id, name);
        }
    }
    return records;
}

}  // namespace rtcausal
