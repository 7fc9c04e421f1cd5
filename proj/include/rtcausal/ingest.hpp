#pragma once

// CSV ingestion of incidence, covariates, intervention dates and auxiliary daily series.
// Every error names the file and line it came from.

#include "rtcausal/design.hpp"
#include "rtcausal/epi_model.hpp"

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace rtcausal {

/// Minimal RFC 4180 reader: header row, comma separator, double-quoted fields.
struct CsvTable {
    std::string source;
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<int> line;   // 1-based source line of each row

    static CsvTable read(const std::filesystem::path& path);
    static CsvTable parse(const std::string& text, const std::string& source = "<memory>");

    /// Column index, or an InputError naming the expected columns.
    std::size_t column(const std::string& name) const;
    bool has_column(const std::string& name) const;
    [[noreturn]] void fail(std::size_t row, const std::string& message) const;
};

/// Quotes a field when it contains a comma, quote or newline.
std::string csv_field(const std::string& text);

struct CaseIngest {
    std::vector<IncidenceSeries> regions;      // sorted by id; day 0 is the first positive count
    bool cumulative = false;
    std::size_t clipped_negatives = 0;         // negative daily differences set to 0
    std::size_t imputed_days = 0;              // calendar gaps filled with 0
    std::vector<Exclusion> exclusions;         // regions without any positive count
};

/// Reads (region, date, new_cases) or (region, date, cum_cases). Cumulative counts are
/// differenced; negative daily values are clipped to 0 and counted.
CaseIngest ingest_cases(const std::filesystem::path& path);
CaseIngest ingest_cases(const CsvTable& table);

/// Writes (region, date, new_cases) starting at each region's day 0.
void write_cases(const std::filesystem::path& path, const std::vector<IncidenceSeries>& regions);

struct CovariateIngest {
    std::vector<std::string> names;
    std::map<std::string, std::map<std::string, std::optional<double>>> values;   // region -> name -> value
    std::map<std::string, std::vector<std::string>> missing;                      // region -> names
};

/// One row per region: `region` then one numeric column per covariate; empty or NA is missing.
CovariateIngest ingest_covariates(const std::filesystem::path& path);
CovariateIngest ingest_covariates(const CsvTable& table);

/// The six state-wide measures.
const std::vector<std::string>& default_intervention_vocabulary();

struct InterventionIngest {
    std::map<std::string, std::map<std::string, Date>> dates;   // region -> intervention -> date
};

/// Rows (region, intervention, date); an empty date means never adopted. Names outside the
/// vocabulary are rejected.
InterventionIngest ingest_interventions(const std::filesystem::path& path, const std::vector<std::string>& vocabulary);
InterventionIngest ingest_interventions(const CsvTable& table, const std::vector<std::string>& vocabulary);

struct DailyIngest {
    std::vector<std::string> names;
    std::map<std::string, std::map<std::string, std::map<Date, double>>> values;   // region -> metric -> date -> value
};

/// Rows (region, date, metric columns...), e.g. hospitalizations or deaths; empty or NA is missing.
DailyIngest ingest_daily(const std::filesystem::path& path);
DailyIngest ingest_daily(const CsvTable& table);

/// Same format with one metric column, e.g. hospitalized.
inline DailyIngest ingest_hospitalization(const std::filesystem::path& path) { return ingest_daily(path); }

/// Rows (region, total[, working_age]).
std::map<std::string, PopulationRecord> ingest_population(const std::filesystem::path& path);

/// Rows (region, date, rt): externally supplied reproduction numbers.
std::map<std::string, std::map<Date, double>> ingest_rt(const std::filesystem::path& path);

/// Calendar-axis records combining the pieces. Regions named in the interventions, covariates
/// or daily files but absent from the cases are an InputError.
std::vector<CalendarRecord> merge_inputs(const CaseIngest& cases, const std::map<std::string, Series>& rt_by_region,
                                         const CovariateIngest* covariates, const InterventionIngest* interventions,
                                         const DailyIngest* daily);

}  // namespace rtcausal
