// Serial reference path vs OpenMP path for the data-parallel kernels.

#include "rtcausal/causal_estimators.hpp"
#include "rtcausal/epi_model.hpp"
#include "rtcausal/synthetic.hpp"

#include <benchmark/benchmark.h>

using namespace rtcausal;

namespace {

Execution mode(const benchmark::State& state) { return state.range(0) ? Execution::parallel : Execution::serial; }

void BM_FitEpidemic(benchmark::State& state) {
    const auto s = SurvivalSpec::exponential(0.1);
    const RateFunction truth({-9, 30, 50}, {0.25, 0.08, 0.12});
    IncidenceSeries obs{"B", {}, simulate_cases(1.0, 9, truth, s, 80), {}};
    const std::vector<int> knots{30, 50};
    FitOptions opt;
    opt.execution = mode(state);
    for (auto _ : state) benchmark::DoNotOptimize(fit_epidemic(obs, knots, s, opt));
}

void BM_DeltaSweep(benchmark::State& state) {
    ScenarioSpec spec;
    spec.effect = -0.5;
    const auto data = generate(spec);
    std::vector<int> deltas(30);
    for (int d = 0; d < 30; ++d) deltas[static_cast<std::size_t>(d)] = d + 1;
    for (auto _ : state)
        benchmark::DoNotOptimize(delta_sweep(data.records, "lockdown", deltas, synthetic_analysis(), mode(state)));
}

void BM_CoverageStudy(benchmark::State& state) {
    ScenarioSpec spec;
    for (auto _ : state) benchmark::DoNotOptimize(coverage_study(spec, 100, 7, synthetic_analysis(), mode(state)));
}

}  // namespace

BENCHMARK(BM_FitEpidemic)->ArgName("parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_DeltaSweep)->ArgName("parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_CoverageStudy)->ArgName("parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
