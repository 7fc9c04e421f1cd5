#include "rtcausal/pipeline.hpp"

#include <boost/version.hpp>
#include <openssl/evp.h>
#include <openssl/opensslv.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace rtcausal {

namespace {

constexpr const char* kToolVersion = "0.1.0";
constexpr int kMaxDelta = 30;

const char* kCommandNames[] = {"fit", "rt", "design", "ate", "hte", "sweep", "simulate", "coverage", "report"};

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

std::string num(const std::optional<double>& v) { return v ? num(*v) : "NA"; }

std::string hex(const unsigned char* data, unsigned len) {
    static const char* digits = "0123456789abcdef";
    std::string out;
    for (unsigned i = 0; i < len; ++i) {
        out += digits[data[i] >> 4];
        out += digits[data[i] & 0xF];
    }
    return out;
}

std::string sha256_bytes(const std::string& bytes) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned len = 0;
    EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr);
    return hex(md, len);
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError(path.string() + ": cannot open file");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// CSV text accumulated in memory; everything is written once the stages finish.
class Table {
public:
    explicit Table(const std::string& header) : text_(header + "\n") {}
    template <class... Fields>
    void row(const Fields&... fields) {
        bool first = true;
        ((text_ += (first ? "" : ","), text_ += csv_field(cell(fields)), first = false), ...);
        text_ += '\n';
    }
    void raw(const std::string& line) { text_ += line + '\n'; }
    const std::string& text() const { return text_; }

private:
    static std::string cell(const std::string& s) { return s; }
    static std::string cell(const char* s) { return s; }
    static std::string cell(double v) { return num(v); }
    static std::string cell(const std::optional<double>& v) { return num(v); }
    static std::string cell(int v) { return std::to_string(v); }
    static std::string cell(long v) { return std::to_string(v); }
    static std::string cell(std::size_t v) { return std::to_string(v); }
    static std::string cell(bool v) { return v ? "true" : "false"; }
    std::string text_;
};

struct Inputs {
    CaseIngest cases;
    std::optional<CovariateIngest> covariates;
    std::optional<InterventionIngest> interventions;
    std::optional<DailyIngest> hospitalization;
    std::optional<std::map<std::string, PopulationRecord>> population;
    std::optional<std::map<std::string, std::map<Date, double>>> rt;
};

struct Run {
    Run(const RunConfig& c, Command cmd) : cfg(c), command(cmd), execution(c.serial ? Execution::serial : Execution::parallel) {}

    const RunConfig& cfg;
    Command command;
    Execution execution;
    std::string stage = "config";
    std::map<std::string, std::string> files;
    std::vector<Exclusion> exclusions;
    nlohmann::json row_counts = nlohmann::json::array();
    nlohmann::json stages = nlohmann::json::array();
    nlohmann::json summary = nlohmann::json::object();
    nlohmann::json warnings = nlohmann::json::array();

    void begin(const std::string& name) { stage = name; }
    void done() { stages.push_back({{"stage", stage}, {"status", "ok"}}); }
    void put(const std::string& name, const Table& t) { files[name] = t.text(); }
    void exclude(std::string entity, std::string scope, std::string reason) {
        exclusions.push_back({std::move(entity), std::move(scope), std::move(reason)});
    }
};

bool wants(Command c, std::initializer_list<Command> list) {
    return std::find(list.begin(), list.end(), c) != list.end();
}

AnalysisOptions analysis_options(const RunConfig& cfg) {
    AnalysisOptions opt;
    opt.design.strict = cfg.strict;
    opt.missing_threshold = cfg.missing_threshold;
    if (cfg.propensity_covariates.empty()) {
        opt.screen_k = cfg.screen_k;
    } else {
        opt.screen_k = 0;
        opt.covariates = cfg.propensity_covariates;
    }
    return opt;
}

std::string scope(const std::string& intervention, int delta) {
    return intervention + ":delta=" + std::to_string(delta);
}

Inputs ingest(Run& run) {
    const auto& cfg = run.cfg;
    run.begin("ingest");
    Inputs in;
    in.cases = ingest_cases(cfg.cases);
    if (!cfg.covariates.empty()) in.covariates = ingest_covariates(cfg.covariates);
    if (!cfg.interventions.empty()) in.interventions = ingest_interventions(cfg.interventions, cfg.vocabulary);
    if (!cfg.hospitalization.empty()) in.hospitalization = ingest_hospitalization(cfg.hospitalization);
    if (!cfg.population.empty()) in.population = ingest_population(cfg.population);
    if (!cfg.rt.empty()) in.rt = ingest_rt(cfg.rt);
    for (const auto& e : in.cases.exclusions) run.exclusions.push_back(e);
    if (in.covariates)
        for (const auto& [region, names] : in.covariates->missing)
            for (const auto& n : names) run.exclude(region, "covariate:" + n, "missing_value");
    run.summary["regions"] = in.cases.regions.size();
    run.summary["cumulative_input"] = in.cases.cumulative;
    run.summary["clipped_negative_days"] = in.cases.clipped_negatives;
    run.summary["imputed_days"] = in.cases.imputed_days;
    run.done();
    return in;
}

std::vector<int> intervention_offsets(const Inputs& in, const IncidenceSeries& s) {
    std::vector<int> out;
    if (!in.interventions) return out;
    const auto it = in.interventions->dates.find(s.region_id);
    if (it == in.interventions->dates.end()) return out;
    for (const auto& [_, d] : it->second) {
        const int k = days_between(s.origin_date, d);
        if (k > 0 && k < static_cast<int>(s.counts.size())) out.push_back(k);
    }
    return out;
}

// R_t per region on its own day-0 axis, from fits or from the supplied file.
std::map<std::string, Series> reproduction_numbers(Run& run, const Inputs& in) {
    const auto& cfg = run.cfg;
    std::map<std::string, Series> rt;
    const auto& regions = in.cases.regions;
    Table series("entity,day,date,metric,value");

    if (in.rt) {
        run.begin("rt_input");
        for (const auto& s : regions) {
            Series r(s.counts.size(), std::nullopt);
            if (auto it = in.rt->find(s.region_id); it != in.rt->end())
                for (const auto& [d, v] : it->second) {
                    const int k = days_between(s.origin_date, d);
                    if (k >= 0 && k < static_cast<int>(r.size())) r[static_cast<std::size_t>(k)] = v;
                }
            else
                run.exclude(s.region_id, "rt_input", "no_rt_values");
            rt[s.region_id] = std::move(r);
        }
    } else {
        run.begin("epi_fit");
        const auto survival = SurvivalSpec::exponential(cfg.survival_rate);
        FitOptions fo;
        fo.t0_max = cfg.t0_max;
        fo.serial_interval = SerialIntervalPmf::discretized_gamma(cfg.serial_interval_mean, cfg.serial_interval_sd);
        fo.execution = Execution::serial;
        std::vector<std::optional<EpidemicFit>> fits(regions.size());
        std::vector<std::string> errors(regions.size());
        const auto n = static_cast<long>(regions.size());
        auto one = [&](long k) {
            const auto& s = regions[static_cast<std::size_t>(k)];
            try {
                const auto knots = knot_schedule(intervention_offsets(in, s), static_cast<int>(s.counts.size()), cfg.knot_spacing);
                fits[static_cast<std::size_t>(k)] = fit_epidemic(s, knots, survival, fo);
            } catch (const EstimationError& e) {
                errors[static_cast<std::size_t>(k)] = to_string(e.kind());
            } catch (const InputError&) {
                errors[static_cast<std::size_t>(k)] = "invalid_series";
            }
        };
        if (run.execution == Execution::parallel) {
#pragma omp parallel for schedule(dynamic)
            for (long k = 0; k < n; ++k) one(k);
        } else {
            for (long k = 0; k < n; ++k) one(k);
        }

        Table summary("region,origin_date,n_days,t0_offset,knots,loss,converged,iterations,status");
        Table knots("region,knot_day,knot_date,rate");
        for (std::size_t k = 0; k < regions.size(); ++k) {
            const auto& s = regions[k];
            const auto& f = fits[k];
            if (!f) {
                summary.row(s.region_id, format_date(s.origin_date), s.counts.size(), "NA", "NA", "NA", "NA", "NA", errors[k]);
                run.exclude(s.region_id, "epi_fit", errors[k]);
                rt[s.region_id] = Series(s.counts.size(), std::nullopt);
                continue;
            }
            summary.row(s.region_id, format_date(s.origin_date), s.counts.size(), f->t0_offset, f->rate.size(), f->loss,
                        f->converged, f->iterations, f->converged ? "ok" : "not_converged");
            if (!f->converged) run.warnings.push_back({{"entity", s.region_id}, {"stage", "epi_fit"}, {"warning", "not_converged"}});
            for (std::size_t j = 0; j < f->rate.size(); ++j) {
                const int day = f->rate.knot_days()[j];
                knots.row(s.region_id, day, format_date(s.origin_date + std::chrono::days{day}), f->rate.knot_values()[j]);
            }
            for (std::size_t t = 0; t < f->fitted_n.size(); ++t)
                series.row(s.region_id, t, format_date(s.origin_date + std::chrono::days{static_cast<int>(t)}),
                           "fitted_cases", f->fitted_n[t]);
            rt[s.region_id] = f->rt;
        }
        if (wants(run.command, {Command::fit, Command::report})) {
            run.put("epi_fits.csv", summary);
            run.put("epi_knots.csv", knots);
        }
    }

    for (const auto& s : regions) {
        const auto ma = moving_average_7(s.counts);
        const auto& r = rt[s.region_id];
        for (std::size_t t = 0; t < s.counts.size(); ++t) {
            const auto date = format_date(s.origin_date + std::chrono::days{static_cast<int>(t)});
            series.row(s.region_id, t, date, "cases", s.counts[t]);
            series.row(s.region_id, t, date, "cases_ma7", ma[t]);
            series.row(s.region_id, t, date, "rt", r[t]);
        }
    }
    if (wants(run.command, {Command::fit, Command::rt, Command::report})) run.put("rt_series.csv", series);
    run.done();
    return rt;
}

std::vector<RegionRecord> aligned_records(Run& run, const Inputs& in, const std::map<std::string, Series>& rt) {
    run.begin("align");
    const auto calendar = merge_inputs(in.cases, rt, in.covariates ? &*in.covariates : nullptr,
                                       in.interventions ? &*in.interventions : nullptr,
                                       in.hospitalization ? &*in.hospitalization : nullptr);
    auto aligned = align_regions(calendar);
    for (const auto& e : aligned.exclusions) run.exclusions.push_back(e);
    auto records = std::move(aligned.records);
    if (in.population) {
        for (const auto& r : records)
            if (!in.population->contains(r.region_id)) throw InputError("population file has no row for region '" + r.region_id + "'");
        records = standardize(std::move(records), *in.population);
    }
    run.done();
    return records;
}

std::vector<std::string> intervention_list(const RunConfig& cfg, const std::vector<RegionRecord>& records) {
    if (!cfg.intervention_names.empty()) {
        for (const auto& name : cfg.intervention_names)
            if (std::find(cfg.vocabulary.begin(), cfg.vocabulary.end(), name) == cfg.vocabulary.end())
                throw InputError("intervention '" + name + "' is not in the vocabulary");
        return cfg.intervention_names;
    }
    std::set<std::string> present;
    for (const auto& r : records)
        for (const auto& [name, _] : r.intervention_days) present.insert(name);
    std::vector<std::string> out;
    for (const auto& v : cfg.vocabulary)
        if (present.contains(v)) out.push_back(v);
    if (out.empty()) throw InputError("no region adopted any intervention in the vocabulary");
    return out;
}

void record_counts(Run& run, const char* stage, const DesignTable& t, const EstimationSample* sample) {
    nlohmann::json c{{"stage", stage},
                     {"intervention", t.intervention},
                     {"delta", t.delta},
                     {"strict", t.strict},
                     {"events", t.events.size()},
                     {"treated", t.count(Arm::treated)},
                     {"control", t.count(Arm::control)},
                     {"excluded", t.count(Arm::excluded)},
                     {"missing_outcome", t.missing_outcome_rows()}};
    if (sample) {
        c["estimation_rows"] = sample->n_rows();
        c["estimation_regions"] = sample->n_regions();
        c["dropped_missing_covariate"] = sample->dropped_missing_covariate;
    }
    run.row_counts.push_back(c);
}

void design_snapshots(Run& run, const std::vector<RegionRecord>& records, const std::vector<std::string>& interventions) {
    run.begin("design");
    Table rows("intervention,delta,event,event_region,event_day,region,arm,outcome,exclusion");
    Table covs("intervention,delta,event,region,covariate,value");
    DesignOptions opt;
    opt.strict = run.cfg.strict;
    for (const auto& iv : interventions)
        for (int delta : run.cfg.detail_deltas) {
            DesignTable t;
            try {
                t = build_design(records, iv, delta, opt);
            } catch (const EstimationError& e) {
                run.exclude(iv, scope(iv, delta), to_string(e.kind()));
                continue;
            }
            for (const auto& r : t.rows) {
                const auto& ev = t.events[r.event];
                rows.row(iv, delta, r.event, t.region_ids[ev.case_region], ev.day, t.region_ids[r.region], to_string(r.arm),
                         r.outcome, r.exclusion);
                for (std::size_t c = 0; c < t.covariate_names.size(); ++c)
                    covs.row(iv, delta, r.event, t.region_ids[r.region], t.covariate_names[c], r.covariates[c]);
            }
            for (const auto& e : t.exclusions) run.exclude(e.entity, scope(iv, delta), e.reason);
            record_counts(run, "design", t, nullptr);
        }
    run.put("design.csv", rows);
    run.put("design_covariates.csv", covs);
    run.done();
}

// Detail-window analyses: ATE, coefficients, screening, R_t changes and, when asked, HTE.
void detail_analyses(Run& run, const std::vector<RegionRecord>& records, const std::vector<std::string>& interventions,
                     bool with_ate, bool with_hte) {
    const auto opt = analysis_options(run.cfg);
    Table ate("intervention,delta,estimate,std_error,ci_lo,ci_hi,regions,events,treated_rows,control_rows,status");
    Table coef("intervention,delta,covariate,estimate,std_error,z,p_value");
    Table screen("intervention,delta,rank,covariate,spearman,missing_fraction,selected");
    Table hte("intervention,delta,moderator,theta,std_error,z,p_value");
    Table diff("entity,delta,metric,value");
    int feasible = 0;

    for (const auto& iv : interventions)
        for (int delta : run.cfg.detail_deltas) {
            run.begin("ate");
            std::optional<Analysis> a;
            try {
                a = analyze(records, iv, delta, opt);
            } catch (const EstimationError& e) {
                ate.row(iv, delta, "NA", "NA", "NA", "NA", "NA", "NA", "NA", "NA", to_string(e.kind()));
                run.exclude(iv, scope(iv, delta), to_string(e.kind()));
                continue;
            }
            ++feasible;
            record_counts(run, with_hte && !with_ate ? "hte" : "ate", a->table, &a->sample);
            const auto& r = a->ate;
            ate.row(iv, delta, r.gamma_hat, r.std_error(), r.ci_lo, r.ci_hi, a->sample.n_regions(), a->sample.n_events(),
                    r.treated_rows, r.control_rows, "ok");
            for (const auto& c : coefficient_table(a->fit)) coef.row(iv, delta, c.name, c.estimate, c.std_error, c.z, c.p_value);
            const auto& sel = a->screening.selected;
            for (std::size_t k = 0; k < a->screening.ranked.size(); ++k) {
                const auto& s = a->screening.ranked[k];
                screen.row(iv, delta, k + 1, s.name, s.spearman, s.missing_fraction,
                           std::find(sel.begin(), sel.end(), s.name) != sel.end());
            }
            for (const auto& [name, frac] : a->screening.excluded_missing) {
                screen.row(iv, delta, "NA", name, "NA", frac, false);
                run.exclude(name, scope(iv, delta), "covariate_missing_above_threshold");
            }
            if (a->sample.dropped_missing_outcome) run.exclude(iv, scope(iv, delta), "rows_missing_outcome:" + std::to_string(a->sample.dropped_missing_outcome));
            if (a->sample.dropped_missing_covariate) run.exclude(iv, scope(iv, delta), "rows_missing_covariate:" + std::to_string(a->sample.dropped_missing_covariate));

            if (with_hte) {
                run.begin("hte");
                const auto m = moderators_from_baseline(a->sample, records, run.cfg.moderators, true);
                const auto h = estimate_hte(a->sample, a->fit, m);
                for (Eigen::Index l = 0; l < h.theta.size(); ++l) {
                    const double se = std::sqrt(std::max(0.0, h.psi(l, l)));
                    hte.row(iv, delta, h.z_names[static_cast<std::size_t>(l)], h.theta[l], se, se > 0 ? h.theta[l] / se : 0.0,
                            h.p_value[l]);
                }
            }
        }

    for (const auto& iv : interventions)
        for (int delta : run.cfg.detail_deltas)
            for (const auto& r : records) {
                auto it = r.intervention_days.find(iv);
                if (it == r.intervention_days.end()) continue;
                if (const auto d = outcome_change(r.rt, it->second, delta)) diff.row(r.region_id, delta, "rt_change_" + iv, *d);
            }

    if (with_ate) {
        run.put("ate.csv", ate);
        run.put("coefficients.csv", coef);
        run.put("screening.csv", screen);
        run.put("rt_difference.csv", diff);
    }
    if (with_hte) run.put("hte.csv", hte);
    if (feasible == 0 && !wants(run.command, {Command::report}))
        throw EstimationError(EstimationErrorKind::insufficient_design, "no intervention is estimable at the detail windows");
    if (with_ate) run.stages.push_back({{"stage", "ate"}, {"status", "ok"}});
    if (with_hte) run.stages.push_back({{"stage", "hte"}, {"status", "ok"}});
}

void sweep(Run& run, const std::vector<RegionRecord>& records, const std::vector<std::string>& interventions) {
    run.begin("sweep");
    const auto opt = analysis_options(run.cfg);
    std::vector<int> deltas;
    for (int d = run.cfg.delta_min; d <= run.cfg.delta_max; ++d) deltas.push_back(d);
    std::string header = "intervention";
    for (int d : deltas) header += ",delta_" + std::to_string(d);
    Table grid(header);
    Table curves("entity,delta,metric,value");
    for (const auto& iv : interventions) {
        const auto cells = delta_sweep(records, iv, deltas, opt, run.execution);
        std::string line = csv_field(iv);
        for (const auto& c : cells) {
            line += "," + csv_field(format_cell(c));
            if (c.ate) {
                curves.row(iv, c.delta, "estimate", c.ate->gamma_hat);
                curves.row(iv, c.delta, "std_error", c.ate->std_error());
                curves.row(iv, c.delta, "ci_lo", c.ate->ci_lo);
                curves.row(iv, c.delta, "ci_hi", c.ate->ci_hi);
            } else {
                run.exclude(iv, scope(iv, c.delta), c.error_kind ? to_string(*c.error_kind) : "infeasible");
            }
        }
        grid.raw(line);
    }
    run.put("ate_grid.csv", grid);
    run.put("effect_curves.csv", curves);
    run.done();
}

ScenarioSpec scenario_of(const RunConfig& cfg) {
    ScenarioSpec s;
    if (!cfg.scenario.empty()) {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(read_file(cfg.scenario));
        } catch (const nlohmann::json::parse_error& e) {
            throw InputError(cfg.scenario.string() + ": " + e.what());
        }
        s = j.get<ScenarioSpec>();
    }
    s.seed = cfg.seed;
    return s;
}

void simulate(Run& run) {
    run.begin("simulate");
    const auto spec = scenario_of(run.cfg);
    const auto data = generate(spec);
    Table cases("region,date,new_cases");
    Table covs("region,x1,x2,group");
    Table ivs("region,intervention,date");
    Table rt("region,date,rt");
    for (const auto& r : data.records) {
        const auto& c = r.daily.at("new_cases");
        for (std::size_t t = 0; t < c.size(); ++t) {
            const auto date = format_date(r.origin_date + std::chrono::days{static_cast<int>(t)});
            cases.row(r.region_id, date, c[t]);
            rt.row(r.region_id, date, r.rt[t]);
        }
        covs.row(r.region_id, r.baseline.at("x1"), r.baseline.at("x2"), r.baseline.at("group"));
        for (const auto& [name, day] : r.intervention_days)
            ivs.row(r.region_id, name, format_date(r.origin_date + std::chrono::days{day}));
    }
    run.put("cases.csv", cases);
    run.put("covariates.csv", covs);
    run.put("interventions.csv", ivs);
    run.put("rt.csv", rt);
    nlohmann::json truth;
    truth["scenario"] = spec;
    truth["gamma"] = data.truth.gamma;
    nlohmann::json regions = nlohmann::json::array();
    for (std::size_t i = 0; i < data.records.size(); ++i) {
        nlohmann::json r;
        r["region"] = data.records[i].region_id;
        r["adoption_day"] = data.truth.adoption_day[i] ? nlohmann::json(*data.truth.adoption_day[i]) : nlohmann::json();
        r["effect"] = data.truth.region_effect[i];
        r["group"] = data.truth.group[i];
        regions.push_back(r);
    }
    truth["regions"] = regions;
    run.files["truth.json"] = truth.dump(2) + "\n";
    run.done();
}

void coverage(Run& run) {
    run.begin("coverage");
    const auto spec = scenario_of(run.cfg);
    const auto opt = synthetic_analysis();
    Table t("delta,replicates,failures,truth,mean_estimate,bias,bias_mc_se,empirical_variance,empirical_variance_mc_se,"
            "mean_sigma2,mean_sigma2_mc_se,variance_ratio,coverage,coverage_mc_se,rejection_rate");
    Table reps("delta,replicate,ok,estimate,sigma2,truth,covered,error");
    for (int delta : run.cfg.detail_deltas) {
        const auto c = coverage_study(spec, run.cfg.replicates, delta, opt, run.execution);
        t.row(delta, c.replicates, c.failures, c.truth.value, c.mean_gamma.value, c.bias.value, c.bias.mc_se,
              c.empirical_variance.value, c.empirical_variance.mc_se, c.mean_sigma2.value, c.mean_sigma2.mc_se,
              c.mean_sigma2.value / c.empirical_variance.value, c.coverage.value, c.coverage.mc_se, c.rejection_rate.value);
        for (std::size_t k = 0; k < c.results.size(); ++k) {
            const auto& r = c.results[k];
            reps.row(delta, k, r.ok, r.gamma_hat, r.sigma2_hat, r.truth, r.covered, r.error);
        }
    }
    run.put("coverage.csv", t);
    run.put("coverage_replicates.csv", reps);
    run.done();
}

nlohmann::json versions() {
    return {{"rtcausal", kToolVersion},
            {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                          std::to_string(EIGEN_MINOR_VERSION)},
            {"boost", BOOST_LIB_VERSION},
            {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." + std::to_string(NLOHMANN_JSON_VERSION_MINOR) +
                                  "." + std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
            {"openssl", OPENSSL_VERSION_TEXT},
            {"compiler", __VERSION__}};
}

nlohmann::json input_hashes(const RunConfig& cfg) {
    nlohmann::json out = nlohmann::json::array();
    const std::pair<const char*, const std::filesystem::path*> files[] = {
        {"cases", &cfg.cases},         {"covariates", &cfg.covariates}, {"interventions", &cfg.interventions},
        {"hospitalization", &cfg.hospitalization}, {"population", &cfg.population}, {"rt", &cfg.rt},
        {"scenario", &cfg.scenario}};
    for (const auto& [role, path] : files) {
        if (path->empty() || !std::filesystem::exists(*path)) continue;
        out.push_back({{"role", role},
                       {"path", path->string()},
                       {"bytes", std::filesystem::file_size(*path)},
                       {"sha256", sha256_file(*path)}});
    }
    return out;
}

void write_outputs(Run& run, nlohmann::json manifest, RunOutcome& outcome) {
    std::filesystem::create_directories(run.cfg.output_dir);
    nlohmann::json artifacts = nlohmann::json::array();
    for (const auto& [name, text] : run.files) {
        std::ofstream out(run.cfg.output_dir / name, std::ios::binary);
        if (!out) throw InputError((run.cfg.output_dir / name).string() + ": cannot open for writing");
        out << text;
        artifacts.push_back({{"file", name}, {"bytes", text.size()}, {"sha256", sha256_bytes(text)}});
        outcome.artifacts.push_back(name);
    }
    manifest["artifacts"] = artifacts;
    std::ofstream out(run.cfg.output_dir / "manifest.json", std::ios::binary);
    out << manifest.dump(2) << "\n";
    outcome.artifacts.push_back("manifest.json");
}

}  // namespace

void to_json(nlohmann::json& j, const RunConfig& c) {
    j = nlohmann::json{{"cases", c.cases.string()},
                       {"covariates", c.covariates.string()},
                       {"interventions", c.interventions.string()},
                       {"hospitalization", c.hospitalization.string()},
                       {"population", c.population.string()},
                       {"rt", c.rt.string()},
                       {"scenario", c.scenario.string()},
                       {"output_dir", c.output_dir.string()},
                       {"intervention_names", c.intervention_names},
                       {"vocabulary", c.vocabulary},
                       {"delta_min", c.delta_min},
                       {"delta_max", c.delta_max},
                       {"detail_deltas", c.detail_deltas},
                       {"survival_rate", c.survival_rate},
                       {"serial_interval_mean", c.serial_interval_mean},
                       {"serial_interval_sd", c.serial_interval_sd},
                       {"t0_max", c.t0_max},
                       {"knot_spacing", c.knot_spacing},
                       {"screen_k", c.screen_k},
                       {"missing_threshold", c.missing_threshold},
                       {"propensity_covariates", c.propensity_covariates},
                       {"strict", c.strict},
                       {"moderators", c.moderators},
                       {"seed", c.seed},
                       {"replicates", c.replicates},
                       {"serial", c.serial}};
}

void from_json(const nlohmann::json& j, RunConfig& c) {
    if (!j.is_object()) throw InputError("config must be a JSON object");
    const nlohmann::json defaults = RunConfig{};
    for (const auto& [key, _] : j.items())
        if (!defaults.contains(key)) throw InputError("unknown config field '" + key + "'");
    auto get = [&](const char* key, auto& field) {
        if (!j.contains(key)) return;
        try {
            j.at(key).get_to(field);
        } catch (const nlohmann::json::exception&) {
            throw InputError(std::string("config field '") + key + "' has the wrong type");
        }
    };
    auto path = [&](const char* key, std::filesystem::path& field) {
        std::string s = field.string();
        get(key, s);
        field = s;
    };
    path("cases", c.cases);
    path("covariates", c.covariates);
    path("interventions", c.interventions);
    path("hospitalization", c.hospitalization);
    path("population", c.population);
    path("rt", c.rt);
    path("scenario", c.scenario);
    path("output_dir", c.output_dir);
    get("intervention_names", c.intervention_names);
    get("vocabulary", c.vocabulary);
    get("delta_min", c.delta_min);
    get("delta_max", c.delta_max);
    get("detail_deltas", c.detail_deltas);
    get("survival_rate", c.survival_rate);
    get("serial_interval_mean", c.serial_interval_mean);
    get("serial_interval_sd", c.serial_interval_sd);
    get("t0_max", c.t0_max);
    get("knot_spacing", c.knot_spacing);
    get("screen_k", c.screen_k);
    get("missing_threshold", c.missing_threshold);
    get("propensity_covariates", c.propensity_covariates);
    get("strict", c.strict);
    get("moderators", c.moderators);
    get("seed", c.seed);
    get("replicates", c.replicates);
    get("serial", c.serial);
}

RunConfig load_config(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw InputError(path.string() + ": " + e.what());
    }
    RunConfig c = j.get<RunConfig>();
    // relative input paths resolve against the config file's directory
    const auto base = path.parent_path();
    for (auto* p : {&c.cases, &c.covariates, &c.interventions, &c.hospitalization, &c.population, &c.rt, &c.scenario})
        if (!p->empty() && p->is_relative()) *p = base / *p;
    return c;
}

const char* to_string(Command c) { return kCommandNames[static_cast<int>(c)]; }

std::optional<Command> parse_command(const std::string& name) {
    for (int k = 0; k < 9; ++k)
        if (name == kCommandNames[k]) return static_cast<Command>(k);
    return std::nullopt;
}

void validate(const RunConfig& c, Command command) {
    auto check_delta = [](int d, const char* what) {
        if (d < 1 || d > kMaxDelta) throw InputError(std::string(what) + " must lie in [1, 30], got " + std::to_string(d));
    };
    check_delta(c.delta_min, "delta_min");
    check_delta(c.delta_max, "delta_max");
    if (c.delta_min > c.delta_max) throw InputError("delta_min exceeds delta_max");
    if (c.detail_deltas.empty()) throw InputError("detail_deltas is empty");
    for (int d : c.detail_deltas) check_delta(d, "detail delta");
    if (!(c.survival_rate > 0)) throw InputError("survival_rate must be positive");
    if (!(c.serial_interval_mean > 0 && c.serial_interval_sd > 0)) throw InputError("serial interval parameters must be positive");
    if (c.t0_max < 0) throw InputError("t0_max must be nonnegative");
    if (c.knot_spacing < 1) throw InputError("knot_spacing must be positive");
    if (c.screen_k < 0) throw InputError("screen_k must be nonnegative");
    if (!(c.missing_threshold >= 0 && c.missing_threshold <= 1)) throw InputError("missing_threshold must lie in [0, 1]");
    if (c.vocabulary.empty()) throw InputError("intervention vocabulary is empty");

    const std::pair<const char*, const std::filesystem::path*> files[] = {
        {"cases", &c.cases},           {"covariates", &c.covariates}, {"interventions", &c.interventions},
        {"hospitalization", &c.hospitalization}, {"population", &c.population}, {"rt", &c.rt},
        {"scenario", &c.scenario}};
    for (const auto& [role, path] : files)
        if (!path->empty() && !std::filesystem::is_regular_file(*path))
            throw InputError(std::string(role) + " file does not exist: " + path->string());

    const bool synthetic = command == Command::simulate || command == Command::coverage;
    if (!synthetic && c.cases.empty()) throw InputError("a cases file is required");
    const bool causal = !synthetic && command != Command::fit && command != Command::rt;
    if (causal && c.interventions.empty()) throw InputError("an interventions file is required");
    if (command == Command::coverage && c.replicates < 100) throw InputError("coverage needs at least 100 replicates");
}

std::string sha256_file(const std::filesystem::path& path) { return sha256_bytes(read_file(path)); }

const std::map<std::string, std::string>& artifact_headers() {
    static const std::map<std::string, std::string> h{
        {"epi_fits.csv", "region,origin_date,n_days,t0_offset,knots,loss,converged,iterations,status"},
        {"epi_knots.csv", "region,knot_day,knot_date,rate"},
        {"rt_series.csv", "entity,day,date,metric,value"},
        {"design.csv", "intervention,delta,event,event_region,event_day,region,arm,outcome,exclusion"},
        {"design_covariates.csv", "intervention,delta,event,region,covariate,value"},
        {"ate.csv", "intervention,delta,estimate,std_error,ci_lo,ci_hi,regions,events,treated_rows,control_rows,status"},
        {"coefficients.csv", "intervention,delta,covariate,estimate,std_error,z,p_value"},
        {"screening.csv", "intervention,delta,rank,covariate,spearman,missing_fraction,selected"},
        {"hte.csv", "intervention,delta,moderator,theta,std_error,z,p_value"},
        {"rt_difference.csv", "entity,delta,metric,value"},
        {"effect_curves.csv", "entity,delta,metric,value"},
        {"ate_grid.csv", "intervention,delta_<min>,...,delta_<max>"},
        {"cases.csv", "region,date,new_cases"},
        {"covariates.csv", "region,x1,x2,group"},
        {"interventions.csv", "region,intervention,date"},
        {"rt.csv", "region,date,rt"},
        {"coverage.csv", "delta,replicates,failures,truth,mean_estimate,bias,bias_mc_se,empirical_variance,"
                         "empirical_variance_mc_se,mean_sigma2,mean_sigma2_mc_se,variance_ratio,coverage,coverage_mc_se,"
                         "rejection_rate"},
        {"coverage_replicates.csv", "delta,replicate,ok,estimate,sigma2,truth,covered,error"}};
    return h;
}

RunOutcome run_pipeline(const RunConfig& config, Command command) {
    Run run(config, command);
    RunOutcome outcome;
    nlohmann::json manifest;
    manifest["tool"] = "rtcausal";
    manifest["command"] = to_string(command);
    manifest["config"] = config;
    manifest["versions"] = versions();
    nlohmann::json error;

    try {
        validate(config, command);
        manifest["inputs"] = input_hashes(config);
        if (command == Command::simulate) {
            simulate(run);
        } else if (command == Command::coverage) {
            coverage(run);
        } else {
            const auto in = ingest(run);
            const auto rt = reproduction_numbers(run, in);
            if (command != Command::fit && command != Command::rt) {
                const auto records = aligned_records(run, in, rt);
                const auto interventions = intervention_list(config, records);
                run.summary["interventions"] = interventions;
                if (wants(command, {Command::design, Command::report})) design_snapshots(run, records, interventions);
                if (wants(command, {Command::ate, Command::hte, Command::report}))
                    detail_analyses(run, records, interventions, command != Command::hte,
                                    wants(command, {Command::hte, Command::report}));
                if (wants(command, {Command::sweep, Command::report})) sweep(run, records, interventions);
            }
        }
    } catch (const InputError& e) {
        outcome.exit_code = 2;
        error = {{"stage", run.stage}, {"kind", "input_error"}, {"message", e.what()}};
    } catch (const EstimationError& e) {
        outcome.exit_code = 3;
        error = {{"stage", run.stage}, {"kind", to_string(e.kind())}, {"message", e.what()}};
    } catch (const std::exception& e) {
        outcome.exit_code = 1;
        error = {{"stage", run.stage}, {"kind", "internal_error"}, {"message", e.what()}};
    }
    if (!manifest.contains("inputs")) manifest["inputs"] = nlohmann::json::array();
    manifest["status"] = outcome.exit_code == 0 ? "ok" : "failed";
    if (!error.is_null()) {
        manifest["error"] = error;
        outcome.message = error["message"].get<std::string>();
        run.stages.push_back({{"stage", run.stage}, {"status", "failed"}});
    }
    manifest["stages"] = run.stages;
    manifest["summary"] = run.summary;
    manifest["row_counts"] = run.row_counts;
    nlohmann::json ex = nlohmann::json::array();
    for (const auto& e : run.exclusions) ex.push_back({{"entity", e.entity}, {"scope", e.scope}, {"reason", e.reason}});
    manifest["exclusions"] = ex;
    manifest["warnings"] = run.warnings;
    try {
        write_outputs(run, manifest, outcome);
    } catch (const std::exception& e) {
        if (outcome.exit_code == 0) outcome.exit_code = 2;
        outcome.message = e.what();
    }
    return outcome;
}

}  // namespace rtcausal
