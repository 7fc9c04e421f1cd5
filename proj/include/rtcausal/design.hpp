#pragma once

// Nested case-control design for one intervention type.
//
// Every region that adopted the intervention (finite T_j) defines an event. The risk set of
// event j holds the regions with T_i >= T_j. Within the risk set, regions adopting inside the
// window [T_j, T_j + delta] are treated, regions adopting later (or never) are controls.
// Each row carries the outcome d_ij = R_i(T_j + delta) - R_i(T_j) and the covariate row
// (H_i(T_j), X_i), where H averages the daily series over the week before T_j.

#include "rtcausal/common.hpp"
#include "rtcausal/dates.hpp"

#include <Eigen/Dense>

#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace rtcausal {

/// Region data on the aligned axis (day 0 = first reported case).
struct RegionRecord {
    std::string region_id;
    Date origin_date{};
    std::map<std::string, std::optional<double>> baseline;   // X without the intercept
    std::map<std::string, Series> daily;                      // sources for H(t)
    Series rt;
    std::map<std::string, int> intervention_days;             // absent: never adopted
    std::set<std::string> excluded_interventions;             // adopted before day 0
};

/// Region data on the calendar axis, before alignment.
struct CalendarRecord {
    std::string region_id;
    Date first_case{};
    Date series_start{};                                      // calendar date of index 0 of daily/rt
    std::map<std::string, std::optional<double>> baseline;
    std::map<std::string, Series> daily;
    Series rt;
    std::map<std::string, Date> interventions;
};

/// Reason-coded record of anything left out of an analysis.
struct Exclusion {
    std::string entity;   // region id, covariate name or event label
    std::string scope;    // intervention or stage the exclusion applies to
    std::string reason;   // stable reason code
};

struct AlignmentResult {
    std::vector<RegionRecord> records;
    std::vector<Exclusion> exclusions;
};

/// Re-indexes every series on days since first case and maps intervention dates to day offsets.
/// An intervention dated before the first case removes the region from that intervention's
/// analysis and is reported.
AlignmentResult align_regions(std::span<const CalendarRecord> regions);

enum class Arm { treated, control, excluded };

const char* to_string(Arm arm);

struct DesignEvent {
    std::size_t case_region = 0;  // index into DesignTable::region_ids
    int day = 0;
};

struct DesignRow {
    std::size_t event = 0;
    std::size_t region = 0;
    Arm arm = Arm::control;
    std::optional<double> outcome;
    std::vector<std::optional<double>> covariates;   // aligned with DesignTable::covariate_names
    std::string exclusion;                           // reason code when arm == excluded
};

struct DesignTable {
    std::string intervention;
    int delta = 1;
    bool strict = false;
    std::vector<std::string> region_ids;             // sorted
    std::vector<std::string> covariate_names;        // time-varying first, then baseline; no intercept
    std::size_t time_varying_count = 0;
    std::vector<DesignEvent> events;                 // ordered by (day, region id)
    std::vector<DesignRow> rows;                     // grouped by event
    std::vector<Exclusion> exclusions;

    std::size_t count(Arm arm) const;
    std::size_t missing_outcome_rows() const;
};

struct DesignOptions {
    /// Also drop rows whose region adopts a different intervention in (T_j, T_j + delta].
    bool strict = false;
    int history_window = 7;
    int history_min_days = 3;
};

/// Name of the one-week history average built from a daily series.
std::string history_name(const std::string& series);

DesignTable build_design(std::span<const RegionRecord> records, const std::string& intervention, int delta,
                         const DesignOptions& options = {});

struct CovariateScreen {
    std::string name;
    std::optional<double> spearman;   // rank correlation with the treatment indicator
    double missing_fraction = 0.0;
    bool constant = false;
};

struct ScreeningReport {
    std::vector<CovariateScreen> ranked;                       // usable candidates, best first
    std::vector<std::string> selected;                         // at most k; intercept implied
    std::vector<std::pair<std::string, double>> excluded_missing;
};

/// Ranks candidate covariates by |Spearman rho| with the treatment indicator across usable rows
/// after dropping those whose missing fraction exceeds the threshold. The missing fraction is the
/// larger of the row-level fraction and the fraction of regions missing the value in every row.
ScreeningReport screen_covariates(const DesignTable& table, int k, double missing_threshold = 0.2);

/// Spearman rank correlation with average ranks for ties; nullopt when either side is constant.
std::optional<double> spearman(std::span<const double> a, std::span<const double> b);

/// Rows ready for estimation: treated or control, observed outcome, complete selected covariates.
/// Regions and events are re-indexed compactly over the retained rows.
struct EstimationSample {
    std::vector<std::string> covariate_names;   // "(intercept)" first
    Eigen::MatrixXd x;
    Eigen::VectorXd treated;                    // 0/1
    Eigen::VectorXd outcome;
    std::vector<int> region;
    std::vector<int> event;
    std::vector<std::string> region_ids;
    std::vector<int> event_case_region;         // compact region of each event's case, -1 if not retained
    std::vector<int> event_day;
    std::size_t dropped_excluded = 0;
    std::size_t dropped_missing_outcome = 0;
    std::size_t dropped_missing_covariate = 0;

    int n_regions() const { return static_cast<int>(region_ids.size()); }
    int n_rows() const { return static_cast<int>(x.rows()); }
    int n_events() const { return static_cast<int>(event_day.size()); }
};

inline constexpr const char* kIntercept = "(intercept)";

EstimationSample make_sample(const DesignTable& table, std::span<const std::string> covariates);

struct PopulationRecord {
    double total = 0.0;
    std::optional<double> working_age;   // ages 17-65
};

enum class Scaling { unscaled, per_100k_total, percent_of_total, percent_of_working_age };

struct StandardizationRules {
    std::map<std::string, Scaling> daily;
    std::map<std::string, Scaling> baseline;

    /// Case and death counts per 100k; unemployment per 100 working-age residents; other
    /// vulnerability counts per 100 residents; everything else (including per-capita income) as is.
    static StandardizationRules defaults();
};

std::vector<RegionRecord> standardize(std::vector<RegionRecord> records,
                                      const std::map<std::string, PopulationRecord>& population,
                                      const StandardizationRules& rules = StandardizationRules::defaults());

}  // namespace rtcausal
