#include "rtcausal/ingest.hpp"

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace rtcausal {

namespace {

std::string trim(std::string s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

bool is_missing(const std::string& s) { return s.empty() || s == "NA" || s == "NaN" || s == "nan"; }

std::optional<double> parse_number(const std::string& s) {
    if (is_missing(s)) return std::nullopt;
    double v = 0;
    const char* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, v);
    if (ec != std::errc() || ptr != end || !std::isfinite(v)) throw std::invalid_argument(s);
    return v;
}

double number_at(const CsvTable& t, std::size_t row, std::size_t col) {
    const auto& text = t.rows[row][col];
    try {
        const auto v = parse_number(text);
        if (!v) t.fail(row, "missing value in column '" + t.header[col] + "'");
        return *v;
    } catch (const std::invalid_argument&) {
        t.fail(row, "cannot parse '" + text + "' as a number in column '" + t.header[col] + "'");
    }
}

std::optional<double> optional_number_at(const CsvTable& t, std::size_t row, std::size_t col) {
    const auto& text = t.rows[row][col];
    try {
        return parse_number(text);
    } catch (const std::invalid_argument&) {
        t.fail(row, "cannot parse '" + text + "' as a number in column '" + t.header[col] + "'");
    }
}

Date date_at(const CsvTable& t, std::size_t row, std::size_t col) {
    const auto d = parse_date(t.rows[row][col]);
    if (!d) t.fail(row, "cannot parse date '" + t.rows[row][col] + "' (expected YYYY-MM-DD)");
    return *d;
}

std::string region_at(const CsvTable& t, std::size_t row, std::size_t col) {
    const auto& r = t.rows[row][col];
    if (r.empty()) t.fail(row, "empty region identifier");
    return r;
}

}  // namespace

CsvTable CsvTable::read(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError(path.string() + ": cannot open file");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path.string());
}

CsvTable CsvTable::parse(const std::string& text, const std::string& source) {
    CsvTable t;
    t.source = source;
    std::vector<std::string> record;
    std::string field;
    bool quoted = false, field_started = false;
    int line = 1, record_line = 1;

    auto end_record = [&] {
        record.push_back(trim(field));
        field.clear();
        field_started = false;
        const bool blank = record.size() == 1 && record[0].empty();
        if (!blank) {
            if (t.header.empty()) {
                t.header = record;
            } else {
                if (record.size() != t.header.size())
                    throw InputError(source + ":" + std::to_string(record_line) + ": expected " +
                                     std::to_string(t.header.size()) + " fields, found " + std::to_string(record.size()));
                t.rows.push_back(record);
                t.line.push_back(record_line);
            }
        }
        record.clear();
    };

    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                if (c == '\n') ++line;
                field += c;
            }
            continue;
        }
        if (c == '"' && !field_started) {
            quoted = true;
            field_started = true;
        } else if (c == ',') {
            record.push_back(trim(field));
            field.clear();
            field_started = false;
        } else if (c == '\n') {
            end_record();
            ++line;
            record_line = line;
        } else if (c != '\r') {
            field += c;
            if (c != ' ' && c != '\t') field_started = true;
        }
    }
    if (quoted) throw InputError(source + ":" + std::to_string(record_line) + ": unterminated quoted field");
    if (!field.empty() || !record.empty()) end_record();
    if (t.header.empty()) throw InputError(source + ": empty file, expected a header row");
    if (!t.header.empty() && t.header[0].rfind("\xEF\xBB\xBF", 0) == 0) t.header[0] = t.header[0].substr(3);
    return t;
}

bool CsvTable::has_column(const std::string& name) const {
    return std::find(header.begin(), header.end(), name) != header.end();
}

std::size_t CsvTable::column(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw InputError(source + ":1: missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
}

void CsvTable::fail(std::size_t row, const std::string& message) const {
    throw InputError(source + ":" + std::to_string(line[row]) + ": " + message);
}

std::string csv_field(const std::string& text) {
    if (text.find_first_of(",\"\n\r") == std::string::npos) return text;
    std::string out = "\"";
    for (char c : text) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

CaseIngest ingest_cases(const std::filesystem::path& path) { return ingest_cases(CsvTable::read(path)); }

CaseIngest ingest_cases(const CsvTable& t) {
    CaseIngest out;
    const std::size_t rc = t.column("region");
    const std::size_t dc = t.column("date");
    std::size_t vc = 0;
    if (t.has_column("new_cases")) {
        vc = t.column("new_cases");
    } else if (t.has_column("cum_cases")) {
        vc = t.column("cum_cases");
        out.cumulative = true;
    } else {
        throw InputError(t.source + ":1: expected a 'new_cases' or 'cum_cases' column");
    }

    std::map<std::string, std::map<Date, std::pair<double, std::size_t>>> raw;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto region = region_at(t, r, rc);
        const Date d = date_at(t, r, dc);
        const double v = number_at(t, r, vc);
        auto [it, inserted] = raw[region].emplace(d, std::make_pair(v, r));
        if (!inserted)
            t.fail(r, "duplicate row for region '" + region + "' on " + format_date(d) + " (first seen on line " +
                          std::to_string(t.line[it->second.second]) + ")");
    }

    for (const auto& [region, by_date] : raw) {
        // dense calendar from first to last date, gaps imputed as zero
        const Date first = by_date.begin()->first;
        const Date last = by_date.rbegin()->first;
        const int len = days_between(first, last) + 1;
        std::vector<double> daily(static_cast<std::size_t>(len), 0.0);
        std::vector<bool> imputed(static_cast<std::size_t>(len), true);
        double prev_cum = 0.0;
        for (const auto& [d, vr] : by_date) {
            const auto k = static_cast<std::size_t>(days_between(first, d));
            double v = vr.first;
            if (out.cumulative) {
                const double cum = v;
                v = cum - prev_cum;
                prev_cum = cum;
            }
            if (v < 0) {
                v = 0;
                ++out.clipped_negatives;
            }
            daily[k] = v;
            imputed[k] = false;
        }
        const auto start = std::find_if(daily.begin(), daily.end(), [](double v) { return v > 0; });
        if (start == daily.end()) {
            out.exclusions.push_back({region, "cases", "no_positive_counts"});
            continue;
        }
        const auto offset = static_cast<std::size_t>(start - daily.begin());
        IncidenceSeries s;
        s.region_id = region;
        s.origin_date = first + std::chrono::days{static_cast<int>(offset)};
        s.counts.assign(daily.begin() + static_cast<std::ptrdiff_t>(offset), daily.end());
        s.imputed.assign(imputed.begin() + static_cast<std::ptrdiff_t>(offset), imputed.end());
        out.imputed_days += static_cast<std::size_t>(std::count(s.imputed.begin(), s.imputed.end(), true));
        out.regions.push_back(std::move(s));
    }
    return out;
}

void write_cases(const std::filesystem::path& path, const std::vector<IncidenceSeries>& regions) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError(path.string() + ": cannot open for writing");
    out << "region,date,new_cases\n";
    char buf[64];
    for (const auto& s : regions)
        for (std::size_t k = 0; k < s.counts.size(); ++k) {
            std::snprintf(buf, sizeof buf, "%.17g", s.counts[k]);
            out << csv_field(s.region_id) << ',' << format_date(s.origin_date + std::chrono::days{static_cast<int>(k)})
                << ',' << buf << '\n';
        }
}

CovariateIngest ingest_covariates(const std::filesystem::path& path) { return ingest_covariates(CsvTable::read(path)); }

CovariateIngest ingest_covariates(const CsvTable& t) {
    CovariateIngest out;
    const std::size_t rc = t.column("region");
    std::vector<std::size_t> cols;
    for (std::size_t c = 0; c < t.header.size(); ++c)
        if (c != rc) {
            if (t.header[c].empty()) throw InputError(t.source + ":1: empty covariate name in column " + std::to_string(c + 1));
            out.names.push_back(t.header[c]);
            cols.push_back(c);
        }
    std::map<std::string, std::size_t> seen;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto region = region_at(t, r, rc);
        if (auto [it, ok] = seen.emplace(region, r); !ok)
            t.fail(r, "duplicate region '" + region + "' (first seen on line " + std::to_string(t.line[it->second]) + ")");
        auto& vals = out.values[region];
        for (std::size_t k = 0; k < cols.size(); ++k) {
            const auto v = optional_number_at(t, r, cols[k]);
            vals[out.names[k]] = v;
            if (!v) out.missing[region].push_back(out.names[k]);
        }
    }
    return out;
}

const std::vector<std::string>& default_intervention_vocabulary() {
    static const std::vector<std::string> v{"lockdown",           "stay_at_home",       "mask_mandate",
                                            "reopen_business",    "reopen_restaurants", "reopen_bars"};
    return v;
}

InterventionIngest ingest_interventions(const std::filesystem::path& path, const std::vector<std::string>& vocabulary) {
    return ingest_interventions(CsvTable::read(path), vocabulary);
}

InterventionIngest ingest_interventions(const CsvTable& t, const std::vector<std::string>& vocabulary) {
    InterventionIngest out;
    const std::size_t rc = t.column("region");
    const std::size_t ic = t.column("intervention");
    const std::size_t dc = t.column("date");
    std::map<std::pair<std::string, std::string>, std::size_t> seen;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto region = region_at(t, r, rc);
        const auto& name = t.rows[r][ic];
        if (std::find(vocabulary.begin(), vocabulary.end(), name) == vocabulary.end()) {
            std::string valid;
            for (const auto& v : vocabulary) valid += (valid.empty() ? "" : ", ") + v;
            t.fail(r, "unknown intervention '" + name + "'; valid names are: " + valid);
        }
        if (auto [it, ok] = seen.emplace(std::make_pair(region, name), r); !ok)
            t.fail(r, "duplicate intervention '" + name + "' for region '" + region + "' (first seen on line " +
                          std::to_string(t.line[it->second]) + ")");
        if (t.rows[r][dc].empty()) continue;
        out.dates[region][name] = date_at(t, r, dc);
    }
    return out;
}

DailyIngest ingest_daily(const std::filesystem::path& path) { return ingest_daily(CsvTable::read(path)); }

DailyIngest ingest_daily(const CsvTable& t) {
    DailyIngest out;
    const std::size_t rc = t.column("region");
    const std::size_t dc = t.column("date");
    std::vector<std::size_t> cols;
    for (std::size_t c = 0; c < t.header.size(); ++c)
        if (c != rc && c != dc) {
            out.names.push_back(t.header[c]);
            cols.push_back(c);
        }
    if (cols.empty()) throw InputError(t.source + ":1: no metric columns besides region and date");
    std::map<std::pair<std::string, Date>, std::size_t> seen;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto region = region_at(t, r, rc);
        const Date d = date_at(t, r, dc);
        if (auto [it, ok] = seen.emplace(std::make_pair(region, d), r); !ok)
            t.fail(r, "duplicate row for region '" + region + "' on " + format_date(d) + " (first seen on line " +
                          std::to_string(t.line[it->second]) + ")");
        for (std::size_t k = 0; k < cols.size(); ++k)
            if (const auto v = optional_number_at(t, r, cols[k])) out.values[region][out.names[k]][d] = *v;
    }
    return out;
}

std::map<std::string, PopulationRecord> ingest_population(const std::filesystem::path& path) {
    const auto t = CsvTable::read(path);
    const std::size_t rc = t.column("region");
    const std::size_t tc = t.column("total");
    const bool has_working = t.has_column("working_age");
    std::map<std::string, PopulationRecord> out;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto region = region_at(t, r, rc);
        PopulationRecord p;
        p.total = number_at(t, r, tc);
        if (!(p.total > 0)) t.fail(r, "population total must be positive");
        if (has_working) p.working_age = optional_number_at(t, r, t.column("working_age"));
        if (!out.emplace(region, p).second) t.fail(r, "duplicate region '" + region + "'");
    }
    return out;
}

std::map<std::string, std::map<Date, double>> ingest_rt(const std::filesystem::path& path) {
    const auto t = CsvTable::read(path);
    const std::size_t rc = t.column("region");
    const std::size_t dc = t.column("date");
    const std::size_t vc = t.column("rt");
    std::map<std::string, std::map<Date, double>> out;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto region = region_at(t, r, rc);
        const Date d = date_at(t, r, dc);
        const auto v = optional_number_at(t, r, vc);
        if (!v) continue;
        if (!out[region].emplace(d, *v).second)
            t.fail(r, "duplicate row for region '" + region + "' on " + format_date(d));
    }
    return out;
}

std::vector<CalendarRecord> merge_inputs(const CaseIngest& cases, const std::map<std::string, Series>& rt_by_region,
                                         const CovariateIngest* covariates, const InterventionIngest* interventions,
                                         const DailyIngest* daily) {
    std::map<std::string, const IncidenceSeries*> by_id;
    for (const auto& s : cases.regions) by_id[s.region_id] = &s;
    std::set<std::string> without_cases;
    for (const auto& e : cases.exclusions) without_cases.insert(e.entity);
    auto require = [&](const std::string& region, const char* file) {
        if (by_id.contains(region)) return true;
        if (without_cases.contains(region)) return false;
        throw InputError("region '" + region + "' appears in the " + file + " file but not in the cases file");
    };
    if (interventions)
        for (const auto& [region, _] : interventions->dates) require(region, "interventions");
    if (covariates)
        for (const auto& [region, _] : covariates->values) require(region, "covariates");
    if (daily)
        for (const auto& [region, _] : daily->values) require(region, "daily");

    std::vector<CalendarRecord> out;
    for (const auto& s : cases.regions) {
        CalendarRecord rec;
        rec.region_id = s.region_id;
        rec.first_case = s.origin_date;
        rec.series_start = s.origin_date;
        rec.daily["new_cases"] = Series(s.counts.begin(), s.counts.end());
        if (auto it = rt_by_region.find(s.region_id); it != rt_by_region.end()) rec.rt = it->second;
        else rec.rt.assign(s.counts.size(), std::nullopt);
        if (covariates) {
            if (auto it = covariates->values.find(s.region_id); it != covariates->values.end()) rec.baseline = it->second;
            else
                for (const auto& n : covariates->names) rec.baseline[n] = std::nullopt;
        }
        if (interventions)
            if (auto it = interventions->dates.find(s.region_id); it != interventions->dates.end())
                rec.interventions = it->second;
        if (daily) {
            const auto it = daily->values.find(s.region_id);
            for (const auto& name : daily->names) {
                Series series(s.counts.size(), std::nullopt);
                if (it != daily->values.end())
                    if (auto m = it->second.find(name); m != it->second.end())
                        for (const auto& [d, v] : m->second) {
                            const int k = days_between(s.origin_date, d);
                            if (k >= 0 && k < static_cast<int>(series.size())) series[static_cast<std::size_t>(k)] = v;
                        }
                rec.daily[name] = std::move(series);
            }
        }
        out.push_back(std::move(rec));
    }
    return out;
}

}  // namespace rtcausal
