#include <doctest.h>

#include "rtcausal/synthetic.hpp"

#include <cmath>

using namespace rtcausal;

namespace {

std::string dump(const SyntheticData& d) {
    nlohmann::json j;
    for (const auto& r : d.records) {
        nlohmann::json rec;
        rec["id"] = r.region_id;
        std::vector<double> rt;
        for (const auto& v : r.rt) rt.push_back(*v);
        rec["rt"] = rt;
        std::vector<double> c;
        for (const auto& v : r.daily.at("new_cases")) c.push_back(*v);
        rec["cases"] = c;
        rec["T"] = r.intervention_days.contains("lockdown") ? r.intervention_days.at("lockdown") : -1;
        j.push_back(rec);
    }
    j.push_back(d.truth.gamma);
    return j.dump();
}

}  // namespace

TEST_CASE("generation is reproducible from the seed") {
    ScenarioSpec s;
    s.effect = -0.3;
    CHECK(dump(generate(s)) == dump(generate(s)));
    ScenarioSpec other = s;
    other.seed = 2;
    CHECK(dump(generate(s)) != dump(generate(other)));

    s.effect_scale = EffectScale::rate;
    s.effect = -0.05;
    CHECK(dump(generate(s)) == dump(generate(s)));
}

TEST_CASE("scenario JSON round trip and validation") {
    ScenarioSpec s;
    s.effect = -0.5;
    s.group_effects = {0.0, -0.4};
    s.confounding_leak = true;
    s.effect_scale = EffectScale::rate;
    const nlohmann::json j = s;
    const auto back = j.get<ScenarioSpec>();
    CHECK(nlohmann::json(back) == j);
    CHECK_THROWS_AS(nlohmann::json::parse(R"({"n_region": 3})").get<ScenarioSpec>(), InputError);
    CHECK_THROWS_AS(nlohmann::json::parse(R"({"effect_scale": "log"})").get<ScenarioSpec>(), InputError);

    ScenarioSpec bad;
    bad.decision_days.clear();
    try {
        generate(bad);
        FAIL("expected degenerate scenario");
    } catch (const EstimationError& e) {
        CHECK(e.kind() == EstimationErrorKind::degenerate_scenario);
    }
    bad.decision_days = {119};
    CHECK_THROWS_AS(generate(bad), EstimationError);
}

TEST_CASE("truth record reproduces the observed series") {
    ScenarioSpec s;
    s.effect = -0.4;
    s.delayed_effect = true;
    const auto d = generate(s);
    int adopters = 0;
    for (std::size_t i = 0; i < d.records.size(); ++i) {
        const auto& T = d.truth.adoption_day[i];
        if (T) ++adopters;
        for (int t = 0; t < s.horizon; ++t) {
            const double k = T ? t - *T : 0;
            const double ramp = !T || k < 1 ? 0.0 : std::min(1.0, k / s.delay_days);
            CHECK(*d.records[i].rt[static_cast<std::size_t>(t)] ==
                  doctest::Approx(d.truth.untreated_rt[i][static_cast<std::size_t>(t)] + s.effect * ramp).epsilon(1e-12));
        }
        // adoption only on decision days, and a probability recorded wherever the region was at risk
        if (T) CHECK(std::find(s.decision_days.begin(), s.decision_days.end(), *T) != s.decision_days.end());
        for (std::size_t k = 0; k < s.decision_days.size(); ++k) {
            const bool at_risk = !T || *T >= s.decision_days[k];
            CHECK(std::isnan(d.truth.adoption_probability[i][k]) != at_risk);
        }
    }
    CHECK(adopters > 2);
    CHECK(d.truth.gamma[0] == 0.0);
    CHECK(d.truth.gamma[3] == doctest::Approx(-0.4 * 3 / 7.0));
    CHECK(d.truth.gamma[10] == doctest::Approx(-0.4));

    ScenarioSpec zero;
    const auto dz = generate(zero);
    for (double g : dz.truth.gamma) CHECK(g == 0.0);
}

TEST_CASE("rate-scale effects move R_t in the direction of the rate change") {
    ScenarioSpec s;
    s.effect_scale = EffectScale::rate;
    s.effect = -0.05;
    const auto d = generate(s);
    CHECK(d.truth.gamma[7] < 0);
    for (const auto& r : d.records)
        for (const auto& v : r.rt) CHECK(std::isfinite(*v));
}

TEST_CASE("intercept-only assignment gives an unbiased intercept-only estimator") {
    ScenarioSpec s;
    s.assign_rt = 0;
    s.assign_x1 = 0;
    s.assign_x2 = 0;
    s.effect = -0.2;
    AnalysisOptions intercept_only;
    intercept_only.screen_k = 0;
    const auto c = coverage_study(s, 200, 5, intercept_only);
    CHECK(c.failures == 0);
    CHECK(std::abs(c.bias.value) < 3 * c.bias.mc_se);
}

TEST_CASE("coverage harness") {
    ScenarioSpec s;
    const auto serial = coverage_study(s, 100, 7, synthetic_analysis(), Execution::serial);
    const auto parallel = coverage_study(s, 100, 7, synthetic_analysis(), Execution::parallel);
    for (int r = 0; r < 100; ++r) CHECK(serial.results[r].gamma_hat == parallel.results[r].gamma_hat);
    CHECK(serial.coverage.value == parallel.coverage.value);

    const auto big = coverage_study(s, 500, 7);
    const double se = std::sqrt(big.coverage.value * (1 - big.coverage.value) / 100.0);
    CHECK(std::abs(big.coverage.value - serial.coverage.value) < 2 * se);
    CHECK(big.empirical_variance.value > 0);
    CHECK(big.mean_sigma2.value > 0);

    CHECK_THROWS_AS(coverage_study(s, 50, 7), InputError);
    CHECK_THROWS_AS(coverage_study(s, 100, 0), InputError);
}

TEST_CASE("unobserved confounding biases the estimate") {
    ScenarioSpec s;
    s.confounding_leak = true;
    const auto c = coverage_study(s, 300, 7);
    CHECK(std::abs(c.bias.value) > 3 * c.bias.mc_se);
}

TEST_CASE("interference biases the estimate") {
    ScenarioSpec s;
    s.effect = -0.5;
    s.interference = true;
    s.interference_strength = 1.0;
    const auto c = coverage_study(s, 200, 7);
    CHECK(std::abs(c.bias.value) > 3 * c.bias.mc_se);
}

TEST_CASE("grouped effects") {
    ScenarioSpec s;
    s.group_effects = {0.0, -0.4};
    const auto d = generate(s);
    for (std::size_t i = 0; i < d.records.size(); ++i) {
        CHECK(d.truth.group[i] == static_cast<int>(i % 2));
        CHECK(*d.records[i].baseline.at("group") == d.truth.group[i]);
    }
    const auto h = hte_study(s, 100, 7);
    CHECK(h.failures == 0);
    REQUIRE(h.mean_theta.size() == 2);
    CHECK(h.truth[1] == doctest::Approx(-0.4));
    CHECK(h.mean_theta[1].value < h.mean_theta[0].value);
}
