#include "rtcausal/causal_estimators.hpp"

#include <cstdio>
#include <map>

namespace rtcausal {

namespace {

class CompensatedVector {
public:
    explicit CompensatedVector(Eigen::Index n) : parts_(static_cast<std::size_t>(n)) {}
    void add(const Eigen::Ref<const Eigen::RowVectorXd>& x, double w) {
        for (Eigen::Index k = 0; k < x.size(); ++k) parts_[static_cast<std::size_t>(k)] += x[k] * w;
    }
    Eigen::RowVectorXd value() const {
        Eigen::RowVectorXd out(static_cast<Eigen::Index>(parts_.size()));
        for (std::size_t k = 0; k < parts_.size(); ++k) out[static_cast<Eigen::Index>(k)] = parts_[k].value();
        return out;
    }

private:
    std::vector<CompensatedSum> parts_;
};

std::size_t region_of(const EstimationSample& s, int r) { return static_cast<std::size_t>(s.region[static_cast<std::size_t>(r)]); }

}  // namespace

AteResult estimate_ate(const EstimationSample& s, const PropensityFit& fit, int delta) {
    const int n = s.n_regions();
    std::vector<CompensatedSum> a(n), b(n), c(n), d(n);
    AteResult res;
    res.delta = delta;
    for (int r = 0; r < s.n_rows(); ++r) {
        const std::size_t i = region_of(s, r);
        const double q = fit.q[r];
        const double y = s.outcome[r];
        if (s.treated[r] > 0.5) {
            a[i] += y / q;
            b[i] += 1.0 / q;
            ++res.treated_rows;
        } else {
            c[i] += y / (1.0 - q);
            d[i] += 1.0 / (1.0 - q);
            ++res.control_rows;
        }
    }
    res.a.resize(n), res.b.resize(n), res.c.resize(n), res.d.resize(n);
    CompensatedSum sa, sb, sc, sd;
    for (int i = 0; i < n; ++i) {
        res.a[i] = a[i].value(), res.b[i] = b[i].value(), res.c[i] = c[i].value(), res.d[i] = d[i].value();
        sa += res.a[i], sb += res.b[i], sc += res.c[i], sd += res.d[i];
    }
    if (!(sb.value() > 0.0) || !(sd.value() > 0.0))
        throw EstimationError(EstimationErrorKind::insufficient_arm,
                              res.treated_rows == 0 ? "no treated rows with an observed outcome"
                                                    : "no control rows with an observed outcome");
    res.gamma_hat = sa.value() / sb.value() - sc.value() / sd.value();
    return res;
}

void ate_variance(const EstimationSample& s, const PropensityFit& fit, AteResult& ate) {
    const int n = s.n_regions();
    const Eigen::Index p = s.x.cols();
    CompensatedSum csa, csb, csc, csd;
    for (int i = 0; i < n; ++i) csa += ate.a[i], csb += ate.b[i], csc += ate.c[i], csd += ate.d[i];
    const double sa = csa.value(), sb = csb.value(), sc = csc.value(), sd = csd.value();
    const double nn = n;

    // derivative pieces of the two weighted means with respect to beta
    CompensatedVector g1(p), h1(p), g2(p), h2(p);
    for (int r = 0; r < s.n_rows(); ++r) {
        const double q = fit.q[r];
        const double y = s.outcome[r];
        if (s.treated[r] > 0.5) {
            g1.add(s.x.row(r), y * (1.0 - q) / q);
            h1.add(s.x.row(r), (1.0 - q) / q);
        } else {
            g2.add(s.x.row(r), y * q / (1.0 - q));
            h2.add(s.x.row(r), q / (1.0 - q));
        }
    }
    const Eigen::RowVectorXd bracket1 = g1.value() / sb - sa / (sb * sb) * h1.value();
    const Eigen::RowVectorXd bracket2 = g2.value() / sd - sc / (sd * sd) * h2.value();

    // terms contributed by region i's own event
    std::vector<double> self(static_cast<std::size_t>(n), 0.0);
    std::vector<CompensatedSum> ctrl_y(static_cast<std::size_t>(s.n_events())), ctrl_w(static_cast<std::size_t>(s.n_events()));
    ate.boundary_case_probabilities = 0;
    for (int r = 0; r < s.n_rows(); ++r) {
        const auto e = static_cast<std::size_t>(s.event[static_cast<std::size_t>(r)]);
        const double q = fit.q[r];
        if (s.treated[r] < 0.5) {
            ctrl_y[e] += s.outcome[r] / (1.0 - q);
            ctrl_w[e] += 1.0 / (1.0 - q);
        } else if (s.region[static_cast<std::size_t>(r)] == s.event_case_region[e]) {
            self[static_cast<std::size_t>(s.event_case_region[e])] += s.outcome[r] / q / sb - sa / (sb * sb) / q;
            if (q <= kProbabilityClip || q >= 1.0 - kProbabilityClip) ++ate.boundary_case_probabilities;
        }
    }
    for (int e = 0; e < s.n_events(); ++e) {
        const int i = s.event_case_region[static_cast<std::size_t>(e)];
        if (i < 0) continue;
        self[static_cast<std::size_t>(i)] +=
            -ctrl_y[static_cast<std::size_t>(e)].value() / sd + sc / (sd * sd) * ctrl_w[static_cast<std::size_t>(e)].value();
    }

    ate.u.resize(n);
    const double mb = sb / nn, md = sd / nn, ma = sa / nn, mc = sc / nn;
    for (int i = 0; i < n; ++i) {
        const Eigen::RowVectorXd vi = fit.v.row(i);
        ate.u[i] = ate.a[i] / mb - ate.c[i] / md - ma / (mb * mb) * ate.b[i] + mc / (md * md) * ate.d[i] -
                   bracket1.dot(vi) - bracket2.dot(vi) + self[static_cast<std::size_t>(i)];
    }
    CompensatedSum su;
    for (int i = 0; i < n; ++i) su += ate.u[i];
    const double ubar = su.value() / nn;
    CompensatedSum ss;
    for (int i = 0; i < n; ++i) ss += (ate.u[i] - ubar) * (ate.u[i] - ubar);
    ate.sigma2_hat = ss.value() / (nn * nn);
    const double half = kNormal975 * std::sqrt(ate.sigma2_hat);
    ate.ci_lo = ate.gamma_hat - half;
    ate.ci_hi = ate.gamma_hat + half;
}

AteResult analyze_ate(const EstimationSample& sample, const PropensityFit& fit, int delta) {
    AteResult res = estimate_ate(sample, fit, delta);
    ate_variance(sample, fit, res);
    return res;
}

HteResult estimate_hte(const EstimationSample& s, const PropensityFit& fit, const Moderators& m) {
    const int n = s.n_regions();
    const Eigen::Index L = m.z.cols();
    const Eigen::Index p = s.x.cols();
    if (m.z.rows() != n) throw InputError("moderator matrix needs one row per region");

    std::vector<int> size(static_cast<std::size_t>(n), 0);
    std::vector<CompensatedSum> weighted(static_cast<std::size_t>(n));
    Eigen::MatrixXd corr = Eigen::MatrixXd::Zero(L, p);
    std::vector<CompensatedVector> xsum;   // per region sum_j d x'(...)
    xsum.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) xsum.emplace_back(p);
    for (int r = 0; r < s.n_rows(); ++r) {
        const auto i = static_cast<std::size_t>(s.region[static_cast<std::size_t>(r)]);
        const double q = fit.q[r];
        const double y = s.outcome[r];
        const bool t = s.treated[r] > 0.5;
        ++size[i];
        weighted[i] += y * (t ? 1.0 / q : -1.0 / (1.0 - q));
        xsum[i].add(s.x.row(r), y * (t ? (1.0 - q) / q : q / (1.0 - q)));
    }

    HteResult res;
    res.z_names = m.names;
    res.sigma1 = Eigen::MatrixXd::Zero(L, L);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(L);
    for (int i = 0; i < n; ++i) {
        const Eigen::VectorXd zi = m.z.row(i).transpose();
        res.sigma1.noalias() += size[static_cast<std::size_t>(i)] * zi * zi.transpose();
        rhs += zi * weighted[static_cast<std::size_t>(i)].value();
        corr.noalias() += zi * xsum[static_cast<std::size_t>(i)].value();
    }
    corr /= static_cast<double>(n);

    Eigen::FullPivLU<Eigen::MatrixXd> lu(res.sigma1);
    if (!lu.isInvertible()) {
        // name the first moderator that adds no new direction
        std::string culprit = m.names.empty() ? "?" : m.names.back();
        for (Eigen::Index l = 1; l <= L; ++l) {
            Eigen::FullPivLU<Eigen::MatrixXd> head(res.sigma1.topLeftCorner(l, l));
            if (head.rank() < l) {
                culprit = m.names[static_cast<std::size_t>(l - 1)];
                break;
            }
        }
        throw EstimationError(EstimationErrorKind::collinear_moderator,
                              "moderator '" + culprit + "' is collinear with the preceding moderators");
    }
    res.theta = lu.solve(rhs);

    res.w.resize(n, L);
    res.sigma2 = Eigen::MatrixXd::Zero(L, L);
    for (int i = 0; i < n; ++i) {
        const Eigen::VectorXd zi = m.z.row(i).transpose();
        const double resid = weighted[static_cast<std::size_t>(i)].value() - size[static_cast<std::size_t>(i)] * res.theta.dot(zi);
        const Eigen::VectorXd wi = zi * resid - corr * fit.v.row(i).transpose();
        res.w.row(i) = wi.transpose();
        res.sigma2.noalias() += wi * wi.transpose();
    }
    const Eigen::MatrixXd inv = lu.inverse();
    res.psi = inv * res.sigma2 * inv;
    res.psi = 0.5 * (res.psi + res.psi.transpose());
    res.wald_z.resize(L);
    res.p_value.resize(L);
    for (Eigen::Index l = 0; l < L; ++l) {
        const double se = std::sqrt(std::max(res.psi(l, l), 0.0));
        res.wald_z[l] = se > 0 ? std::abs(res.theta[l]) / se : 0.0;
        res.p_value[l] = se > 0 ? two_sided_p(res.wald_z[l]) : 1.0;
    }
    return res;
}

Moderators moderators_from_baseline(const EstimationSample& sample, std::span<const RegionRecord> records,
                                    std::span<const std::string> names, bool intercept) {
    std::map<std::string, const RegionRecord*> by_id;
    for (const auto& r : records) by_id[r.region_id] = &r;
    Moderators m;
    if (intercept) m.names.push_back(kIntercept);
    for (const auto& name : names) m.names.push_back(name);
    m.z.resize(sample.n_regions(), static_cast<Eigen::Index>(m.names.size()));
    for (int i = 0; i < sample.n_regions(); ++i) {
        const auto it = by_id.find(sample.region_ids[static_cast<std::size_t>(i)]);
        if (it == by_id.end()) throw InputError("no record for region '" + sample.region_ids[static_cast<std::size_t>(i)] + "'");
        Eigen::Index col = 0;
        if (intercept) m.z(i, col++) = 1.0;
        for (const auto& name : names) {
            const auto b = it->second->baseline.find(name);
            if (b == it->second->baseline.end() || !b->second)
                throw InputError("moderator '" + name + "' missing for region '" + it->first + "'");
            m.z(i, col++) = *b->second;
        }
    }
    return m;
}

Analysis analyze(std::span<const RegionRecord> records, const std::string& intervention, int delta,
                 const AnalysisOptions& options) {
    Analysis out;
    out.table = build_design(records, intervention, delta, options.design);
    std::vector<std::string> covariates = options.covariates;
    if (options.screen_k > 0) {
        out.screening = screen_covariates(out.table, options.screen_k, options.missing_threshold);
        covariates = out.screening.selected;
    }
    out.sample = make_sample(out.table, covariates);
    out.fit = fit_propensity(out.sample, options.propensity);
    out.ate = analyze_ate(out.sample, out.fit, delta);
    return out;
}

namespace {

SweepCell sweep_cell(std::span<const RegionRecord> records, const std::string& intervention, int delta,
                     const AnalysisOptions& options) {
    SweepCell cell;
    cell.delta = delta;
    try {
        const Analysis a = analyze(records, intervention, delta, options);
        cell.ate = a.ate;
        cell.coefficients = coefficient_table(a.fit);
        cell.rows = static_cast<std::size_t>(a.sample.n_rows());
        cell.events = static_cast<std::size_t>(a.sample.n_events());
    } catch (const EstimationError& e) {
        cell.error = e.what();
        cell.error_kind = e.kind();
    } catch (const InputError& e) {
        cell.error = e.what();
    }
    return cell;
}

}  // namespace

std::vector<SweepCell> delta_sweep(std::span<const RegionRecord> records, const std::string& intervention,
                                   std::span<const int> deltas, const AnalysisOptions& options, Execution execution) {
    if (deltas.empty()) throw InputError("delta range is empty");
    std::vector<SweepCell> cells(deltas.size());
    const auto count = static_cast<std::ptrdiff_t>(deltas.size());
    if (execution == Execution::parallel) {
#pragma omp parallel for schedule(dynamic)
        for (std::ptrdiff_t k = 0; k < count; ++k)
            cells[static_cast<std::size_t>(k)] = sweep_cell(records, intervention, deltas[static_cast<std::size_t>(k)], options);
    } else {
        for (std::ptrdiff_t k = 0; k < count; ++k)
            cells[static_cast<std::size_t>(k)] = sweep_cell(records, intervention, deltas[static_cast<std::size_t>(k)], options);
    }
    return cells;
}

std::string format_cell(const SweepCell& cell) {
    if (!cell.ate) return "-";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3f (%.3f)", cell.ate->gamma_hat, cell.ate->std_error());
    return buf;
}

}  // namespace rtcausal
