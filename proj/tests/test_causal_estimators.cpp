#include <doctest.h>

#include "fixtures.hpp"
#include "literal_oracle.hpp"
#include "rtcausal/causal_estimators.hpp"

#include <cmath>

using namespace rtcausal;
using fixtures::RawRow;

namespace {

struct Case {
    EstimationSample sample;
    PropensityFit fit;
};

Case random_case(std::uint64_t seed, int n = 30, int extra = 1, double effect = -0.3) {
    std::mt19937_64 rng(seed);
    const auto recs = fixtures::random_records(rng, n, extra, effect);
    const auto table = build_design(recs, "lockdown", 4);
    std::vector<std::string> cov{"x1"};
    for (int c = 0; c < extra; ++c) cov.push_back("e" + std::to_string(c));
    Case out{make_sample(table, cov), {}};
    out.fit = fit_propensity(out.sample);
    return out;
}

PropensityFit fixed_q(const EstimationSample& s, double q) {
    PropensityFit f;
    f.q = Eigen::VectorXd::Constant(s.n_rows(), q);
    f.v = Eigen::MatrixXd::Zero(s.n_regions(), s.x.cols());
    return f;
}

double scaled_error(const Eigen::MatrixXd& got, const Eigen::MatrixXd& want) {
    return (got - want).cwiseAbs().maxCoeff() / std::max(1.0, want.cwiseAbs().maxCoeff());
}

}  // namespace

TEST_CASE("ATE point estimate examples") {
    auto c = random_case(11);
    SUBCASE("constant outcome gives zero") {
        c.sample.outcome.setConstant(0.37);
        CHECK(std::abs(estimate_ate(c.sample, c.fit).gamma_hat) < 1e-14);
    }
    SUBCASE("equal propensities reduce to a difference of arm means") {
        const auto f = fixed_q(c.sample, 0.5);
        double st = 0, sc = 0, nt = 0, nc = 0;
        for (Eigen::Index r = 0; r < c.sample.n_rows(); ++r) {
            if (c.sample.treated[r] > 0.5) st += c.sample.outcome[r], nt += 1;
            else sc += c.sample.outcome[r], nc += 1;
        }
        CHECK(estimate_ate(c.sample, f).gamma_hat == doctest::Approx(st / nt - sc / nc).epsilon(1e-13));
    }
    SUBCASE("weight scale invariance") {
        const auto r = estimate_ate(c.sample, c.fit);
        const double k = 3.7;
        const double scaled = (k * r.a.sum()) / (k * r.b.sum()) - (k * r.c.sum()) / (k * r.d.sum());
        CHECK(scaled == doctest::Approx(r.gamma_hat).epsilon(1e-13));
    }
    SUBCASE("interval and component invariants") {
        const auto r = analyze_ate(c.sample, c.fit, 4);
        CHECK(r.sigma2_hat >= 0);
        CHECK(r.ci_lo == doctest::Approx(r.gamma_hat - 1.96 * std::sqrt(r.sigma2_hat)));
        CHECK(r.ci_hi == doctest::Approx(r.gamma_hat + 1.96 * std::sqrt(r.sigma2_hat)));
        CHECK(r.b.minCoeff() >= 0);
        CHECK(r.d.minCoeff() >= 0);
        CHECK(r.treated_rows + r.control_rows == static_cast<std::size_t>(c.sample.n_rows()));
    }
}

TEST_CASE("identical U_i give zero variance") {
    // two mirror-image regions with no covariates and symmetric rows
    const std::vector<RawRow> rows{{0, 0, true, 1.0, {}}, {1, 0, false, 1.0, {}}, {1, 1, true, 1.0, {}}, {0, 1, false, 1.0, {}}};
    const auto s = fixtures::raw_sample(rows, 2, 2);
    const auto fit = fit_propensity(s);
    const auto r = analyze_ate(s, fit);
    CHECK(std::abs(r.u[0] - r.u[1]) < 1e-14);
    CHECK(r.sigma2_hat < 1e-28);
}

TEST_CASE("empty arm is an estimation error") {
    auto c = random_case(12);
    PropensityFit f = fixed_q(c.sample, 0.5);
    EstimationSample only_controls = c.sample;
    only_controls.treated.setZero();
    try {
        estimate_ate(only_controls, f);
        FAIL("expected insufficient arm");
    } catch (const EstimationError& e) {
        CHECK(e.kind() == EstimationErrorKind::insufficient_arm);
    }
}

TEST_CASE("pipeline influence terms match a literal transcription") {
    for (std::uint64_t seed = 100; seed < 120; ++seed) {
        const auto c = random_case(seed, 25 + static_cast<int>(seed % 10), static_cast<int>(seed % 3));
        const auto lit = oracle::evaluate(c.sample, c.fit.q);
        const auto ate = analyze_ate(c.sample, c.fit);
        CHECK(scaled_error(c.fit.v, lit.v) < 1e-10);
        CHECK(scaled_error(ate.u, lit.u) < 1e-10);
        CHECK(std::abs(ate.gamma_hat - lit.gamma) < 1e-12);
        CHECK(std::abs(ate.sigma2_hat - lit.sigma2) <= 1e-10 * std::max(1.0, lit.sigma2));

        Moderators m;
        m.names = {kIntercept, "x1"};
        m.z.resize(c.sample.n_regions(), 2);
        for (int i = 0; i < c.sample.n_regions(); ++i) m.z(i, 0) = 1.0, m.z(i, 1) = std::sin(1.0 + i);
        const auto hte = estimate_hte(c.sample, c.fit, m);
        const auto lh = oracle::evaluate_hte(c.sample, c.fit.q, lit.v, m.z);
        CHECK(scaled_error(hte.sigma1, lh.sigma1) < 1e-10);
        CHECK(scaled_error(hte.theta, lh.theta) < 1e-10);
        CHECK(scaled_error(hte.w, lh.w) < 1e-10);
        CHECK(scaled_error(hte.sigma2, lh.sigma2) < 1e-10);
    }
}

TEST_CASE("never-adopting regions get no self terms") {
    const auto c = random_case(7, 30, 0);
    const auto lit = oracle::evaluate(c.sample, c.fit.q);
    std::vector<bool> is_case(static_cast<std::size_t>(c.sample.n_regions()), false);
    for (int cr : c.sample.event_case_region)
        if (cr >= 0) is_case[static_cast<std::size_t>(cr)] = true;
    int never = 0;
    for (int i = 0; i < c.sample.n_regions(); ++i)
        if (!is_case[static_cast<std::size_t>(i)]) {
            ++never;
            CHECK(lit.self[static_cast<std::size_t>(i)] == 0.0);
        }
    CHECK(never > 0);
}

TEST_CASE("HTE closed forms") {
    const auto c = random_case(31, 40);
    SUBCASE("intercept only") {
        Moderators m{{kIntercept}, Eigen::MatrixXd::Ones(c.sample.n_regions(), 1)};
        const auto h = estimate_hte(c.sample, c.fit, m);
        double num = 0;
        for (Eigen::Index r = 0; r < c.sample.n_rows(); ++r) {
            const double q = c.fit.q[r];
            const double t = c.sample.treated[r];
            num += c.sample.outcome[r] * (t / q - (1 - t) / (1 - q));
        }
        CHECK(h.theta[0] == doctest::Approx(num / c.sample.n_rows()).epsilon(1e-13));
        CHECK(h.p_value[0] >= 0);
        CHECK(h.p_value[0] <= 1);
        CHECK(h.rejects(0) == (std::abs(h.theta[0]) / std::sqrt(h.psi(0, 0)) > 1.96));
    }
    SUBCASE("block-diagonal groups decouple") {
        Moderators m;
        m.names = {"g1", "g2"};
        m.z = Eigen::MatrixXd::Zero(c.sample.n_regions(), 2);
        for (int i = 0; i < c.sample.n_regions(); ++i) m.z(i, i % 2) = 1.0;
        const auto h = estimate_hte(c.sample, c.fit, m);
        for (int g = 0; g < 2; ++g) {
            double num = 0, den = 0;
            for (Eigen::Index r = 0; r < c.sample.n_rows(); ++r) {
                if (c.sample.region[r] % 2 != g) continue;
                const double q = c.fit.q[r];
                const double t = c.sample.treated[r];
                num += c.sample.outcome[r] * (t / q - (1 - t) / (1 - q));
                den += 1;
            }
            CHECK(h.theta[g] == doctest::Approx(num / den).epsilon(1e-12));
        }
        CHECK((h.psi - h.psi.transpose()).norm() < 1e-14);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(h.psi);
        CHECK(eig.eigenvalues().minCoeff() >= -1e-12);
    }
    SUBCASE("collinear moderators") {
        Moderators m;
        m.names = {kIntercept, "a", "a_plus_one"};
        m.z.resize(c.sample.n_regions(), 3);
        for (int i = 0; i < c.sample.n_regions(); ++i) m.z(i, 0) = 1, m.z(i, 1) = i, m.z(i, 2) = i + 1;
        CHECK_THROWS_WITH_AS(estimate_hte(c.sample, c.fit, m), doctest::Contains("a_plus_one"), EstimationError);
    }
}

TEST_CASE("delta sweep") {
    std::mt19937_64 rng(4);
    const auto recs = fixtures::random_records(rng, 40, 0, -0.3);
    AnalysisOptions opt;
    opt.screen_k = 0;
    opt.covariates = {"x1"};
    const std::vector<int> deltas{1, 3, 7, 14, 29};
    const auto par = delta_sweep(recs, "lockdown", deltas, opt, Execution::parallel);
    const auto ser = delta_sweep(recs, "lockdown", deltas, opt, Execution::serial);
    REQUIRE(par.size() == deltas.size());
    for (std::size_t k = 0; k < deltas.size(); ++k) {
        CHECK(par[k].delta == deltas[k]);
        CHECK(format_cell(par[k]) == format_cell(ser[k]));
        if (par[k].ate) CHECK(par[k].ate->gamma_hat == ser[k].ate->gamma_hat);
    }
    CHECK(par[0].ate.has_value());
    CHECK(par[0].ate->gamma_hat < 0);

    // every region adopts within a short span: wide windows leave no controls
    std::vector<RegionRecord> crowded;
    for (int i = 0; i < 6; ++i) {
        RegionRecord r;
        r.region_id = "C" + std::to_string(i);
        r.intervention_days["lockdown"] = 10 + 2 * i;
        r.rt.assign(60, 1.0 + 0.01 * i);
        r.baseline["x1"] = i;
        crowded.push_back(r);
    }
    const std::vector<int> wide{30};
    const auto cells = delta_sweep(crowded, "lockdown", wide, opt);
    CHECK(format_cell(cells[0]) == "-");
    CHECK_FALSE(cells[0].error.empty());
    CHECK_THROWS_AS(delta_sweep(crowded, "lockdown", std::vector<int>{}, opt), InputError);
}
