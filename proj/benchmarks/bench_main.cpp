#include <benchmark/benchmark.h>

#include <limits>

#include "anmi/estimators.hpp"
#include "anmi/harness.hpp"
#include "anmi/mcmc.hpp"
#include "anmi/normal.hpp"
#include "anmi/sampling.hpp"

using namespace anmi;

namespace {

const ScenarioConfig& desk() {
    static const ScenarioConfig c = builtin_scenarios().at("scenario1-desk");
    return c;
}

struct Fixture {
    StratifiedPopulation pop;
    MaskedSample masked;
    AuxiliaryMargin margin = AuxiliaryMargin::overall(0, 1);
    // True x with the realized response flags.
    SurveySample complete;
};

const Fixture& fixture() {
    static const Fixture f = [] {
        Fixture out;
        const auto& c = desk();
        out.pop = generate_population({c.theta_by_stratum, c.alpha, c.stratum_sizes}, 1);
        out.masked = impose_missingness(draw_stratified_sample(out.pop, c.stratum_draws, 2), c.gamma, 3);
        out.margin = theoretical_margin(out.pop, c.stratum_draws, MarginScope::Overall);
        out.complete = out.masked.truth.unsealed();
        for (std::size_t i = 0; i < out.complete.size(); ++i) out.complete.units[i].r = out.masked.sample.units[i].r;
        return out;
    }();
    return f;
}

void BM_NormalCdf(benchmark::State& state) {
    double x = -6.0;
    for (auto _ : state) {
        benchmark::DoNotOptimize(normal_cdf(x));
        x = x > 6.0 ? -6.0 : x + 0.001;
    }
}
BENCHMARK(BM_NormalCdf);

void BM_TruncatedNormal(benchmark::State& state) {
    const double lower = static_cast<double>(state.range(0));
    Rng rng(4);
    for (auto _ : state) {
        benchmark::DoNotOptimize(sample_truncated_normal(0.0, lower, std::numeric_limits<double>::infinity(), rng));
    }
}
BENCHMARK(BM_TruncatedNormal)->Arg(-2)->Arg(0)->Arg(2)->Arg(5);

void BM_ChainStep(benchmark::State& state) {
    const auto& f = fixture();
    ChainSettings settings;
    settings.method = static_cast<Method>(state.range(0));
    settings.seed = 5;
    Chain chain(f.masked.sample, f.margin, settings);
    for (auto _ : state) benchmark::DoNotOptimize(chain.step());
    state.SetLabel(std::string(method_name(settings.method)));
}
BENCHMARK(BM_ChainStep)->DenseRange(0, 3);

void BM_WeightedProbitFit(benchmark::State& state) {
    const auto& complete = fixture().complete;
    for (auto _ : state) benchmark::DoNotOptimize(weighted_probit_fit(complete));
}
BENCHMARK(BM_WeightedProbitFit);

void BM_ResponseProbitFit(benchmark::State& state) {
    const auto& complete = fixture().complete;
    for (auto _ : state) benchmark::DoNotOptimize(unweighted_probit_fit(complete));
}
BENCHMARK(BM_ResponseProbitFit);

void BM_HtWithSe(benchmark::State& state) {
    const auto& complete = fixture().complete;
    for (auto _ : state) benchmark::DoNotOptimize(ht_with_se(complete));
}
BENCHMARK(BM_HtWithSe);

}  // namespace

BENCHMARK_MAIN();
