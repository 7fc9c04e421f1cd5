#include "rtcausal/propensity.hpp"

#include <algorithm>
#include <cmath>

namespace rtcausal {

namespace {

void check_arms(const EstimationSample& s) {
    const double treated = s.treated.sum();
    if (s.n_rows() == 0 || treated == 0.0 || treated == static_cast<double>(s.n_rows()))
        throw EstimationError(EstimationErrorKind::separation,
                              "propensity model separated on '" + std::string(kIntercept) +
                                  "': need at least one treated and one control row");
}

void check_rank(const EstimationSample& s, const Eigen::MatrixXd& scaled) {
    const Eigen::Index p = scaled.cols();
    if (scaled.rows() < p)
        throw EstimationError(EstimationErrorKind::rank_deficiency,
                              "propensity model has more covariates than rows");
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> full(scaled);
    if (full.rank() == p) return;
    for (Eigen::Index c = 1; c <= p; ++c) {
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> head(scaled.leftCols(c));
        if (head.rank() < c)
            throw EstimationError(EstimationErrorKind::rank_deficiency,
                                  "covariate '" + s.covariate_names[static_cast<std::size_t>(c - 1)] +
                                      "' is a linear combination of earlier columns");
    }
}

// Exact check for a single covariate that splits treated from control rows.
void check_single_separation(const EstimationSample& s) {
    for (Eigen::Index c = 1; c < s.x.cols(); ++c) {
        double t_lo = INFINITY, t_hi = -INFINITY, c_lo = INFINITY, c_hi = -INFINITY;
        for (Eigen::Index r = 0; r < s.n_rows(); ++r) {
            const double v = s.x(r, c);
            if (s.treated[r] > 0.5) {
                t_lo = std::min(t_lo, v);
                t_hi = std::max(t_hi, v);
            } else {
                c_lo = std::min(c_lo, v);
                c_hi = std::max(c_hi, v);
            }
        }
        if (t_hi < c_lo || c_hi < t_lo)
            throw EstimationError(EstimationErrorKind::separation,
                                  "covariate '" + s.covariate_names[static_cast<std::size_t>(c)] +
                                      "' completely separates treated from control rows");
    }
}

Eigen::VectorXd probabilities(const Eigen::MatrixXd& x, const Eigen::VectorXd& beta) {
    Eigen::VectorXd eta = x * beta;
    return eta.unaryExpr([](double e) { return expit(e); });
}

}  // namespace

Eigen::VectorXd propensity_score(const EstimationSample& sample, const Eigen::VectorXd& beta) {
    return sample.x.transpose() * (sample.treated - probabilities(sample.x, beta));
}

Eigen::MatrixXd influence_vectors(const EstimationSample& sample, const Eigen::VectorXd& q) {
    const Eigen::Index p = sample.x.cols();
    const int n = sample.n_regions();
    Eigen::MatrixXd info = Eigen::MatrixXd::Zero(p, p);
    Eigen::MatrixXd score = Eigen::MatrixXd::Zero(n, p);
    for (Eigen::Index r = 0; r < sample.n_rows(); ++r) {
        const auto xr = sample.x.row(r);
        info.noalias() += xr.transpose() * xr * (q[r] * (1.0 - q[r]));
        score.row(sample.region[static_cast<std::size_t>(r)]) += xr * (sample.treated[r] - q[r]);
    }
    info /= static_cast<double>(n);
    Eigen::LLT<Eigen::MatrixXd> llt(info);
    Eigen::FullPivLU<Eigen::MatrixXd> lu(info);
    if (llt.info() != Eigen::Success || !lu.isInvertible())
        throw EstimationError(EstimationErrorKind::rank_deficiency, "propensity information matrix is singular");
    return llt.solve(score.transpose()).transpose();
}

Eigen::VectorXd PropensityFit::standard_errors() const { return covariance.diagonal().cwiseSqrt(); }

PropensityFit fit_propensity(const EstimationSample& sample, const PropensityOptions& options) {
    check_arms(sample);
    const Eigen::Index p = sample.x.cols();

    // Newton is affine invariant; column scaling only improves conditioning.
    Eigen::VectorXd scale(p);
    for (Eigen::Index c = 0; c < p; ++c) {
        const double rms = std::sqrt(sample.x.col(c).squaredNorm() / static_cast<double>(sample.n_rows()));
        scale[c] = rms > 0 ? rms : 1.0;
    }
    const Eigen::MatrixXd xs = sample.x * scale.cwiseInverse().asDiagonal();
    check_rank(sample, xs);
    check_single_separation(sample);

    auto score_norm = [&](const Eigen::VectorXd& bs) {
        return (sample.x.transpose() * (sample.treated - probabilities(xs, bs))).norm();
    };

    PropensityFit fit;
    fit.covariate_names = sample.covariate_names;
    Eigen::VectorXd bs = Eigen::VectorXd::Zero(p);
    double norm = score_norm(bs);
    const double stall_tolerance = 1e-8 * std::max(1.0, static_cast<double>(sample.n_rows()));
    while (fit.iterations < options.max_iterations && norm >= options.tolerance) {
        ++fit.iterations;
        const Eigen::VectorXd q = probabilities(xs, bs);
        const Eigen::VectorXd g = xs.transpose() * (sample.treated - q);
        const Eigen::VectorXd w = q.cwiseProduct(Eigen::VectorXd::Ones(q.size()) - q);
        const Eigen::MatrixXd h = xs.transpose() * w.asDiagonal() * xs;
        Eigen::LDLT<Eigen::MatrixXd> ldlt(h);
        if (ldlt.info() != Eigen::Success) break;
        const Eigen::VectorXd step = ldlt.solve(g);

        double t = 1.0;
        Eigen::VectorXd next = bs + step;
        double next_norm = score_norm(next);
        while (!(next_norm < norm) && t > 1e-9) {
            t *= 0.5;
            next = bs + t * step;
            next_norm = score_norm(next);
        }
        if (!(next_norm < norm)) break;
        bs = next;
        norm = next_norm;
        if (bs.norm() > 1e3) break;
    }
    fit.beta = bs.cwiseQuotient(scale);
    fit.score_norm = norm;
    fit.converged = norm < options.tolerance || norm < stall_tolerance;

    // Coefficients this large on unit-scale columns only arise when the likelihood has no maximum.
    if (bs.norm() > options.divergence_norm) {
        Eigen::Index worst = 1;
        for (Eigen::Index c = 1; c < p; ++c)
            if (std::abs(bs[c]) > std::abs(bs[worst])) worst = c;
        const auto& name = p > 1 ? sample.covariate_names[static_cast<std::size_t>(worst)] : sample.covariate_names[0];
        throw EstimationError(EstimationErrorKind::separation,
                              "propensity fit diverges along '" + name + "' (quasi-complete separation)");
    }

    fit.q = probabilities(sample.x, fit.beta);
    for (Eigen::Index r = 0; r < fit.q.size(); ++r) {
        if (fit.q[r] < kProbabilityClip) {
            fit.q[r] = kProbabilityClip;
            ++fit.clipped;
        } else if (fit.q[r] > 1.0 - kProbabilityClip) {
            fit.q[r] = 1.0 - kProbabilityClip;
            ++fit.clipped;
        }
    }

    fit.p_case.assign(static_cast<std::size_t>(sample.n_events()), std::nullopt);
    for (Eigen::Index r = 0; r < sample.n_rows(); ++r) {
        const int e = sample.event[static_cast<std::size_t>(r)];
        if (sample.region[static_cast<std::size_t>(r)] == sample.event_case_region[static_cast<std::size_t>(e)])
            fit.p_case[static_cast<std::size_t>(e)] = fit.q[r];
    }

    fit.v = influence_vectors(sample, fit.q);
    const double n = sample.n_regions();
    fit.covariance = fit.v.transpose() * fit.v / (n * n);
    return fit;
}

std::vector<CoefficientRow> coefficient_table(const PropensityFit& fit) {
    std::vector<CoefficientRow> rows;
    const Eigen::VectorXd se = fit.standard_errors();
    for (Eigen::Index c = 0; c < fit.beta.size(); ++c) {
        CoefficientRow row;
        row.name = fit.covariate_names[static_cast<std::size_t>(c)];
        row.estimate = fit.beta[c];
        row.std_error = se[c];
        row.z = se[c] > 0 ? row.estimate / se[c] : 0.0;
        row.p_value = se[c] > 0 ? two_sided_p(row.z) : 1.0;
        rows.push_back(row);
    }
    return rows;
}

}  // namespace rtcausal
