#include <doctest.h>

#include "fixtures.hpp"
#include "mle_oracle.hpp"
#include "rtcausal/propensity.hpp"

#include <cmath>

using namespace rtcausal;
using fixtures::RawRow;

namespace {

EstimationSample design_sample(std::uint64_t seed, int n, int extra = 0) {
    std::mt19937_64 rng(seed);
    const auto recs = fixtures::random_records(rng, n, extra);
    const auto table = build_design(recs, "lockdown", 3);
    std::vector<std::string> cov{"x1"};
    for (int c = 0; c < extra; ++c) cov.push_back("e" + std::to_string(c));
    return make_sample(table, cov);
}

}  // namespace

TEST_CASE("intercept-only fits reduce to the logit of the treated fraction") {
    std::vector<RawRow> balanced;
    for (int e = 0; e < 5; ++e) {
        balanced.push_back({e, e, true, 0.0, {}});
        balanced.push_back({e + 5, e, false, 0.0, {}});
    }
    const auto fit = fit_propensity(fixtures::raw_sample(balanced, 10, 5));
    CHECK(fit.converged);
    CHECK(std::abs(fit.beta[0]) < 1e-12);

    std::vector<RawRow> skewed;
    for (int r = 0; r < 10; ++r) skewed.push_back({r, r % 3, r < 3, 0.0, {}});
    const auto f2 = fit_propensity(fixtures::raw_sample(skewed, 10, 3));
    CHECK(f2.beta[0] == doctest::Approx(std::log(0.3 / 0.7)).epsilon(1e-12));
}

TEST_CASE("six-row two-covariate table matches the likelihood oracle") {
    // a control point sits inside the treated triangle, so the likelihood has a finite maximum
    const std::vector<RawRow> rows{{0, 0, true, 0, {1.0, 0.0}},  {1, 0, false, 0, {0.0, 0.5}},
                                   {2, 0, false, 0, {2.0, 2.0}}, {1, 1, true, 0, {-1.0, 0.0}},
                                   {2, 1, false, 0, {-2.0, -1.0}}, {3, 1, true, 0, {0.0, 1.5}}};
    const auto s = fixtures::raw_sample(rows, 4, 2);
    const auto fit = fit_propensity(s);
    std::vector<std::vector<double>> x;
    std::vector<double> y;
    for (const auto& r : rows) {
        x.push_back({1.0, r.x[0], r.x[1]});
        y.push_back(r.treated ? 1.0 : 0.0);
    }
    const auto oracle = mle_oracle(x, y);
    for (int c = 0; c < 3; ++c) CHECK(std::abs(fit.beta[c] - oracle[static_cast<std::size_t>(c)]) < 1e-8);
    CHECK(fit.score_norm < 1e-8);
}

TEST_CASE("fit properties on random designs") {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const auto s = design_sample(seed, 40, 2);
        const auto fit = fit_propensity(s);
        CHECK(fit.converged);
        CHECK(propensity_score(s, fit.beta).norm() < 1e-8);

        std::vector<std::vector<double>> x;
        std::vector<double> y;
        for (Eigen::Index r = 0; r < s.n_rows(); ++r) {
            x.push_back({s.x(r, 0), s.x(r, 1), s.x(r, 2), s.x(r, 3)});
            y.push_back(s.treated[r]);
        }
        const auto oracle = mle_oracle(x, y);
        for (int c = 0; c < 4; ++c) CHECK(std::abs(fit.beta[c] - oracle[static_cast<std::size_t>(c)]) < 1e-8);

        for (Eigen::Index r = 0; r < fit.q.size(); ++r) {
            CHECK(fit.q[r] >= kProbabilityClip);
            CHECK(fit.q[r] <= 1 - kProbabilityClip);
        }
        CHECK(fit.v.rows() == s.n_regions());
        CHECK(fit.v.cols() == 4);
        const double scale = fit.v.cwiseAbs().sum();
        CHECK(fit.v.colwise().sum().norm() <= 1e-6 * std::max(1.0, scale));

        const Eigen::MatrixXd cov = fit.v.transpose() * fit.v / s.n_regions();
        CHECK((cov - cov.transpose()).norm() < 1e-12);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
        CHECK(eig.eigenvalues().minCoeff() >= -1e-10);

        for (int e = 0; e < s.n_events(); ++e) {
            const int cr = s.event_case_region[static_cast<std::size_t>(e)];
            if (cr < 0) continue;
            for (Eigen::Index r = 0; r < s.n_rows(); ++r)
                if (s.event[r] == e && s.region[r] == cr) CHECK(*fit.p_case[e] == fit.q[r]);
        }
    }
}

TEST_CASE("influence vectors by hand for one covariate") {
    const std::vector<RawRow> rows{{0, 0, true, 0, {1.0}},  {1, 0, false, 0, {0.0}}, {2, 0, true, 0, {2.0}},
                                   {1, 1, true, 0, {-1.0}}, {2, 1, false, 0, {0.5}}};
    const auto s = fixtures::raw_sample(rows, 3, 2);
    Eigen::VectorXd q(5);
    q << 0.6, 0.3, 0.7, 0.4, 0.5;
    const auto v = influence_vectors(s, q);

    // 2x2 information matrix divided by n = 3, inverted by the adjugate formula
    double a = 0, b = 0, d = 0;
    for (int r = 0; r < 5; ++r) {
        const double w = q[r] * (1 - q[r]);
        const double xr = rows[r].x[0];
        a += w;
        b += w * xr;
        d += w * xr * xr;
    }
    a /= 3, b /= 3, d /= 3;
    const double det = a * d - b * b;
    for (int i = 0; i < 3; ++i) {
        double s0 = 0, s1 = 0;
        for (int r = 0; r < 5; ++r) {
            if (rows[r].region != i) continue;
            const double res = (rows[r].treated ? 1.0 : 0.0) - q[r];
            s0 += res;
            s1 += res * rows[r].x[0];
        }
        CHECK(v(i, 0) == doctest::Approx((d * s0 - b * s1) / det).epsilon(1e-12));
        CHECK(v(i, 1) == doctest::Approx((-b * s0 + a * s1) / det).epsilon(1e-12));
    }
}

TEST_CASE("duplicating every region leaves V_i unchanged and halves the coefficient variance") {
    const auto s = design_sample(7, 30);
    auto rows_of = [&](const EstimationSample& src, int shift) {
        std::vector<RawRow> rows;
        for (Eigen::Index r = 0; r < src.n_rows(); ++r)
            rows.push_back({src.region[r] + shift, src.event[r] + (shift ? src.n_events() : 0), src.treated[r] > 0.5,
                            src.outcome[r], {src.x(r, 1)}});
        return rows;
    };
    auto once = rows_of(s, 0);
    auto twice = once;
    const auto copy = rows_of(s, s.n_regions());
    twice.insert(twice.end(), copy.begin(), copy.end());
    const auto f1 = fit_propensity(fixtures::raw_sample(once, s.n_regions(), s.n_events()));
    const auto f2 = fit_propensity(fixtures::raw_sample(twice, 2 * s.n_regions(), 2 * s.n_events()));
    CHECK((f1.beta - f2.beta).norm() < 1e-9);
    for (int i = 0; i < s.n_regions(); ++i) {
        CHECK((f1.v.row(i) - f2.v.row(i)).norm() < 1e-8);
        CHECK((f1.v.row(i) - f2.v.row(i + s.n_regions())).norm() < 1e-8);
    }
    CHECK(((f2.covariance * 2.0) - f1.covariance).norm() < 1e-10 * (1 + f1.covariance.norm()));
}

TEST_CASE("propensity errors") {
    SUBCASE("complete separation names the covariate") {
        const std::vector<RawRow> rows{{0, 0, true, 0, {0.3, 5.0}}, {1, 0, false, 0, {0.1, -1.0}},
                                       {2, 0, false, 0, {0.9, -2.0}}, {1, 1, true, 0, {0.5, 6.0}},
                                       {2, 1, false, 0, {0.2, -3.0}}};
        const auto s = fixtures::raw_sample(rows, 3, 2, {"noise", "splitter"});
        CHECK_THROWS_WITH_AS(fit_propensity(s), doctest::Contains("'splitter'"), EstimationError);
    }
    SUBCASE("two-covariate separation is caught by divergence") {
        // neither covariate separates alone, x1 + x2 > 0 does
        const std::vector<RawRow> rows{{0, 0, true, 0, {2.0, -1.0}}, {1, 0, false, 0, {-2.0, 1.0}},
                                       {2, 0, true, 0, {-1.0, 2.0}}, {3, 0, false, 0, {1.0, -2.0}},
                                       {1, 1, true, 0, {0.5, 0.6}}, {3, 1, false, 0, {0.4, -0.5}}};
        const auto s = fixtures::raw_sample(rows, 4, 2);
        try {
            fit_propensity(s);
            FAIL("expected separation");
        } catch (const EstimationError& e) {
            CHECK(e.kind() == EstimationErrorKind::separation);
        }
    }
    SUBCASE("duplicate column is rank deficient") {
        const std::vector<RawRow> rows{{0, 0, true, 0, {1.0, 2.0}}, {1, 0, false, 0, {2.0, 4.0}},
                                       {2, 0, true, 0, {3.0, 6.0}}, {1, 1, false, 0, {0.5, 1.0}},
                                       {2, 1, true, 0, {1.5, 3.0}}, {0, 1, false, 0, {2.5, 5.0}}};
        const auto s = fixtures::raw_sample(rows, 3, 2, {"a", "twice_a"});
        try {
            fit_propensity(s);
            FAIL("expected rank deficiency");
        } catch (const EstimationError& e) {
            CHECK(e.kind() == EstimationErrorKind::rank_deficiency);
            CHECK(std::string(e.what()).find("'twice_a'") != std::string::npos);
        }
    }
    SUBCASE("no control rows") {
        const std::vector<RawRow> rows{{0, 0, true, 0, {}}, {1, 0, true, 0, {}}};
        CHECK_THROWS_AS(fit_propensity(fixtures::raw_sample(rows, 2, 1)), EstimationError);
    }
}

TEST_CASE("adding an irrelevant covariate leaves the other coefficients stable") {
    const int reps = 200;
    Eigen::MatrixXd diffs(reps, 2), bases(reps, 2);
    std::mt19937_64 noise(99);
    std::normal_distribution<double> z;
    for (int rep = 0; rep < reps; ++rep) {
        auto s = design_sample(1000 + static_cast<std::uint64_t>(rep), 60);
        const auto base = fit_propensity(s);
        EstimationSample wider = s;
        wider.x.conservativeResize(Eigen::NoChange, 3);
        for (Eigen::Index r = 0; r < s.n_rows(); ++r) wider.x(r, 2) = z(noise);
        wider.covariate_names.push_back("noise");
        const auto with = fit_propensity(wider);
        diffs.row(rep) = (with.beta.head(2) - base.beta).transpose();
        bases.row(rep) = base.beta.transpose();
    }
    // the average shift is within 5 Monte Carlo standard errors of the estimator itself
    for (int c = 0; c < 2; ++c) {
        const double mean = diffs.col(c).mean();
        const double centre = bases.col(c).mean();
        const double sd = std::sqrt((bases.col(c).array() - centre).square().sum() / (reps - 1));
        CHECK(std::abs(mean) < 5 * sd / std::sqrt(static_cast<double>(reps)));
    }
}

TEST_CASE("coefficient table") {
    const auto s = design_sample(3, 40);
    const auto fit = fit_propensity(s);
    const auto table = coefficient_table(fit);
    REQUIRE(table.size() == 2);
    CHECK(table[0].name == kIntercept);
    CHECK(table[1].name == "x1");
    for (const auto& row : table) {
        CHECK(row.std_error > 0);
        CHECK(row.p_value >= 0);
        CHECK(row.p_value <= 1);
        CHECK(row.z == doctest::Approx(row.estimate / row.std_error));
    }
}
