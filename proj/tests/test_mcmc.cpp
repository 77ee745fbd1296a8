#include <doctest.h>

#include <cmath>
#include <sstream>

#include "anmi/csv.hpp"
#include "anmi/error.hpp"
#include "anmi/mcmc.hpp"
#include "anmi/normal.hpp"
#include "support/oracles.hpp"

using namespace anmi;

namespace {

struct Toy {
    StratifiedPopulation pop;
    MaskedSample masked;
    AuxiliaryMargin margin = AuxiliaryMargin::overall(0, 1);
};

Toy toy(std::uint64_t seed, ResponseTruth gamma = {-0.25, 0.1, 0.3, -1.1}, MarginScope scope = MarginScope::Overall) {
    Toy t;
    t.pop = generate_population({{{1, {0.5, 0.15, 0.35}}, {2, {0.1, 0.45, 0.45}}}, {0.5, -0.5, -1.0}, {{1, 3500}, {2, 1500}}},
                                seed);
    const StratumCounts draws{{1, 150}, {2, 350}};
    t.masked = impose_missingness(draw_stratified_sample(t.pop, draws, seed + 1), gamma, seed + 2);
    t.margin = theoretical_margin(t.pop, draws, scope);
    return t;
}

ChainSettings short_chain(Method m, std::uint64_t seed) {
    ChainSettings s;
    s.iterations = 600;
    s.burn_in = 300;
    s.thin = 30;
    s.method = m;
    s.seed = seed;
    return s;
}

ProbitCoefficients outcome_with(double a0) {
    auto c = ProbitCoefficients::zeros(false, 0);
    c.intercept = a0;
    return c;
}

}  // namespace

TEST_CASE("method names and traits") {
    CHECK(method_name(Method::MarWeight) == "MAR+Weight");
    CHECK(method_name(Method::AnConstraintWeight) == "AN+Constraint+Weight");
    CHECK(parse_method("AN_CONSTRAINT") == Method::AnConstraint);
    CHECK(parse_method("an+constraint+weight") == Method::AnConstraintWeight);
    CHECK(parse_method("mar-weight") == Method::MarWeight);
    CHECK_FALSE(parse_method("bogus").has_value());
    CHECK_FALSE(traits(Method::MarWeight).response_has_x);
    CHECK_FALSE(traits(Method::AnConstraint).outcome_has_stratum);
    CHECK(traits(Method::AnConstraintWeight).uses_margin);
    CHECK_FALSE(traits(Method::AnWeight).uses_margin);
}

TEST_CASE("chain settings") {
    ChainSettings s;
    CHECK(s.retained_count() == 50);
    s.burn_in = s.iterations;
    CHECK_THROWS_AS(s.validate(), ParameterDomainError);
    s = ChainSettings{};
    s.thin = 0;
    CHECK_THROWS_AS(s.validate(), ParameterDomainError);
}

TEST_CASE("imputation probability examples") {
    auto g = ProbitCoefficients::zeros(true, 0);
    g.intercept = -0.25;
    g.x_effect = 0.0;
    const auto a = outcome_with(0.5);
    CHECK(imputation_probability(1, 0, a, g) == doctest::Approx(normal_cdf(0.5)).epsilon(1e-14));

    g.x_effect = -1.1;
    const double gx = normal_cdf(0.5);
    const double expected = gx * normal_cdf(-1.35) / (gx * normal_cdf(-1.35) + (1 - gx) * normal_cdf(-0.25));
    CHECK(imputation_probability(1, 0, a, g) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(expected == doctest::Approx(0.3308).epsilon(1e-3));

    Rng rng(1);
    for (int i = 0; i < 1000; ++i) CHECK(impute_missing_x(1, 0, outcome_with(40.0), g, rng) == 1);

    // Without an x term the response model drops out.
    auto mar = ProbitCoefficients::zeros(false, 0);
    mar.intercept = 2.0;
    CHECK(imputation_probability(2, 0, a, mar) == doctest::Approx(normal_cdf(0.5)).epsilon(1e-14));
}

TEST_CASE("constraint acceptance ratio") {
    CHECK(constraint_acceptance_ratio(10.0, 10.0, {3.0, 2.0}) == 1.0);
    CHECK(constraint_acceptance_ratio(1.0, 0.0, {0.0, 1.0}) == doctest::Approx(std::exp(-0.5)).epsilon(1e-15));
    const double p = constraint_acceptance_ratio(25608.0, 25026.0, {25026.0, 338724.0});
    const double direct = std::exp(-(582.0 * 582.0) / (2 * 338724.0));
    CHECK(p == doctest::Approx(direct).epsilon(1e-12));
    CHECK(p == doctest::Approx(std::exp(-0.5)).epsilon(1e-5));
    CHECK(constraint_acceptance_ratio(0.0, 3.0, {0.0, 1.0}) > 1.0);
    CHECK_THROWS_AS(constraint_acceptance_ratio(0.0, 0.0, {0.0, 0.0}), ParameterDomainError);
}

TEST_CASE("metropolis step with no missing values") {
    const auto t = toy(3, {-8, 0, 0, 0});
    REQUIRE(t.masked.sample.missing_count() == 0);
    const ImputationProblem problem(t.masked.sample);
    ChainState state;
    state.outcome = outcome_with(0.0);
    state.response = ProbitCoefficients::zeros(true, 0);
    state.completed_totals = problem.completed_totals({});
    const auto before = state.completed_totals;
    Rng rng(4);
    const auto flags = metropolis_imputation_step(state, problem, &t.margin, rng);
    CHECK(flags == std::vector<bool>{true});
    CHECK(state.completed_totals == before);
}

TEST_CASE("flat constraint accepts essentially everything") {
    const auto t = toy(5);
    const ImputationProblem problem(t.masked.sample);
    ChainState state;
    state.outcome = outcome_with(0.2);
    state.response = ProbitCoefficients::zeros(true, 0);
    state.imputations.assign(problem.missing_units().size(), 0);
    state.completed_totals = problem.completed_totals(state.imputations);
    const auto flat = AuxiliaryMargin::overall(t.margin.overall_entry().total, 1e12);
    Rng rng(6);
    int accepted = 0;
    for (int i = 0; i < 1000; ++i) accepted += metropolis_imputation_step(state, problem, &flat, rng)[0] ? 1 : 0;
    CHECK(accepted >= 995);
}

TEST_CASE("six-unit constrained step matches the enumerated stationary law") {
    const auto overall = oracle::six_unit_stationarity(200000, 7);
    CHECK(overall.total_variation <= 0.01);
    const auto strata = oracle::six_unit_stationarity(200000, 8, true);
    CHECK(strata.total_variation <= 0.01);
}

TEST_CASE("chain returns the requested number of completed datasets") {
    const auto t = toy(9);
    ChainSettings s = short_chain(Method::AnConstraint, 10);
    const auto r = run_chain(t.masked.sample, t.margin, s);
    CHECK(r.completed.size() == 10);
    CHECK(r.draws.size() == 10);
    CHECK(static_cast<std::int64_t>(r.trace.accepted[0].size()) == s.iterations);
    CHECK(r.trace.overall_ratio >= 0.0);
    CHECK(r.trace.overall_ratio <= 1.0);
    ChainSettings defaults;
    CHECK(defaults.retained_count() == 50);
}

TEST_CASE("chain invariants: observed values, bookkeeping, x never absent") {
    const auto t = toy(11, {-0.25, 0.1, 0.3, -1.1}, MarginScope::PerStratum);
    for (Method m : kAllMethods) {
        const auto r = run_chain(t.masked.sample, t.margin, short_chain(m, 12));
        for (std::size_t l = 0; l < r.completed.size(); ++l) {
            const auto& c = r.completed[l];
            for (std::size_t i = 0; i < c.size(); ++i) {
                REQUIRE(c.units[i].x.has_value());
                const auto& in = t.masked.sample.units[i];
                CHECK(c.units[i].r == in.r);
                if (!in.missing()) CHECK(c.units[i].x == in.x);
            }
            const auto totals = ht_totals_by_stratum(c);
            for (const auto& [s, v] : r.draws[l].completed_totals) CHECK(std::abs(totals.at(s) - v) <= 1e-9);
        }
    }
}

TEST_CASE("bookkeeping holds after every iteration") {
    const auto t = toy(13, {-0.25, 0.1, 0.3, -1.1}, MarginScope::PerStratum);
    for (Method m : {Method::AnConstraint, Method::AnConstraintWeight, Method::MarWeight}) {
        Chain chain(t.masked.sample, t.margin, short_chain(m, 14));
        for (int i = 0; i < 200; ++i) {
            chain.step();
            const auto recomputed = ht_totals_by_stratum(chain.problem().complete(chain.state().imputations));
            for (const auto& [s, v] : chain.state().completed_totals) CHECK(std::abs(recomputed.at(s) - v) <= 1e-9);
        }
    }
}

TEST_CASE("MAR method never carries an x coefficient") {
    const auto t = toy(15);
    const auto r = run_chain(t.masked.sample, std::nullopt, short_chain(Method::MarWeight, 16));
    for (const auto& d : r.draws) {
        CHECK_FALSE(d.response.x_effect.has_value());
        CHECK(d.outcome.has_stratum_terms());
    }
    const auto an = run_chain(t.masked.sample, t.margin, short_chain(Method::AnConstraint, 16));
    for (const auto& d : an.draws) {
        CHECK(d.response.x_effect.has_value());
        CHECK_FALSE(d.outcome.has_stratum_terms());
    }
}

TEST_CASE("constraint methods need a margin") {
    const auto t = toy(17);
    CHECK_THROWS_AS(run_chain(t.masked.sample, std::nullopt, short_chain(Method::AnConstraint, 1)),
                    ParameterDomainError);
}

TEST_CASE("no missing data: completed datasets equal the input") {
    const auto t = toy(18, {-8, 0, 0, 0});
    const auto r = run_chain(t.masked.sample, t.margin, short_chain(Method::AnConstraint, 19));
    std::ostringstream in;
    write_sample_csv(in, t.masked.sample);
    for (const auto& c : r.completed) {
        std::ostringstream out;
        write_sample_csv(out, c);
        CHECK(out.str() == in.str());
    }
    CHECK(r.trace.overall_ratio == 1.0);
}

TEST_CASE("chains are deterministic in the seed") {
    const auto t = toy(20);
    const auto a = run_chain(t.masked.sample, t.margin, short_chain(Method::AnConstraintWeight, 21));
    const auto b = run_chain(t.masked.sample, t.margin, short_chain(Method::AnConstraintWeight, 21));
    std::ostringstream ta;
    std::ostringstream tb;
    write_trace_csv(ta, a);
    write_trace_csv(tb, b);
    CHECK(ta.str() == tb.str());
    for (std::size_t l = 0; l < a.completed.size(); ++l) {
        std::ostringstream sa;
        std::ostringstream sb;
        write_sample_csv(sa, a.completed[l]);
        write_sample_csv(sb, b.completed[l]);
        CHECK(sa.str() == sb.str());
    }
}

TEST_CASE("low acceptance is reported as a warning") {
    const auto t = toy(22);
    // A tiny margin variance: once the chain sits near the total almost
    // every whole-vector proposal lands far away.
    const auto tight = AuxiliaryMargin::overall(t.margin.overall_entry().total, 1.0);
    auto settings = short_chain(Method::AnConstraint, 23);
    settings.warning_window = 100;
    const auto r = run_chain(t.masked.sample, tight, settings);
    CHECK(r.trace.overall_ratio < 0.1);
    CHECK_FALSE(r.trace.warnings.empty());
}

TEST_CASE("per-stratum margins give per-stratum ratios") {
    const auto t = toy(24, {-0.25, 0.1, 0.3, -1.1}, MarginScope::PerStratum);
    const auto r = run_chain(t.masked.sample, t.margin, short_chain(Method::AnConstraint, 25));
    CHECK(r.trace.blocks == std::vector<int>{1, 2});
    REQUIRE(r.trace.stratum_ratios.size() == 2);
    for (const auto& [s, v] : r.trace.stratum_ratios) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("trace csv has one row per retained draw") {
    const auto t = toy(26);
    const auto r = run_chain(t.masked.sample, t.margin, short_chain(Method::AnConstraint, 27));
    std::ostringstream out;
    write_trace_csv(out, r);
    const auto rows = csv::parse(out.str());
    CHECK(rows.size() == r.draws.size() + 1);
    CHECK(rows[0].front() == "iteration");
    CHECK(rows[0].back() == "accepted");
}
