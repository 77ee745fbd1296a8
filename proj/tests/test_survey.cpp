#include <doctest.h>

#include <cmath>
#include <sstream>

#include "anmi/csv.hpp"
#include "anmi/error.hpp"
#include "anmi/normal.hpp"
#include "anmi/survey.hpp"
#include "support/oracles.hpp"

using namespace anmi;

namespace {

PopulationSpec scenario_spec(OutcomeTruth alpha = {0.5, -0.5, -1.0}) {
    return {{{1, {0.5, 0.15, 0.35}}, {2, {0.1, 0.45, 0.45}}}, alpha, {{1, 35000}, {2, 15000}}};
}

StratifiedPopulation toy_population() {
    // Two strata of ten units, five ones each.
    StratifiedPopulation pop;
    pop.stratum_sizes = {{1, 10}, {2, 10}};
    for (int s = 1; s <= 2; ++s) {
        for (int i = 0; i < 10; ++i) pop.units.push_back({s, 1 + i % 3, i < 5 ? 1 : 0});
    }
    return pop;
}

}  // namespace

TEST_CASE("population y frequencies follow theta") {
    const auto pop = generate_population(scenario_spec(), 11);
    CHECK(pop.size() == 50000);
    std::array<double, 3> counts{};
    double n1 = 0;
    for (const auto& u : pop.units) {
        if (u.stratum != 1) continue;
        counts[static_cast<std::size_t>(u.y - 1)] += 1;
        n1 += 1;
    }
    CHECK(n1 == 35000);
    const std::array<double, 3> theta{0.5, 0.15, 0.35};
    for (std::size_t k = 0; k < 3; ++k) {
        const double se = std::sqrt(theta[k] * (1 - theta[k]) / n1);
        CHECK(std::abs(counts[k] / n1 - theta[k]) <= 3 * se);
    }
}

TEST_CASE("degenerate theta gives a single category") {
    PopulationSpec spec{{{1, {1.0, 0.0, 0.0}}, {2, {1.0, 0.0, 0.0}}}, {0, 0, 0}, {{1, 100}, {2, 50}}};
    for (const auto& u : generate_population(spec, 3).units) CHECK(u.y == 1);
}

TEST_CASE("x follows the probit link given y") {
    const auto pop = generate_population(scenario_spec(), 12);
    double ones = 0;
    double n = 0;
    for (const auto& u : pop.units) {
        if (u.y != 1) continue;
        ones += u.x;
        n += 1;
    }
    const double p = oracle::normal_cdf(0.5);
    CHECK(std::abs(ones / n - p) <= 3 * std::sqrt(p * (1 - p) / n));
}

TEST_CASE("invalid probability vectors are rejected") {
    PopulationSpec spec{{{1, {0.5, 0.5, 0.5}}}, {0, 0, 0}, {{1, 10}}};
    CHECK_THROWS_AS(generate_population(spec, 1), ParameterDomainError);
    spec.theta_by_stratum[1] = {1.2, -0.1, -0.1};
    CHECK_THROWS_AS(generate_population(spec, 1), ParameterDomainError);
    spec.theta_by_stratum[1] = {0.2, 0.3, 0.5};
    spec.stratum_sizes[1] = 0;
    CHECK_THROWS_AS(generate_population(spec, 1), ParameterDomainError);
}

TEST_CASE("stratified sample weights") {
    const auto pop = generate_population(scenario_spec(), 13);
    const auto s = draw_stratified_sample(pop, {{1, 1500}, {2, 3500}}, 14);
    CHECK(s.size() == 5000);
    for (const auto& u : s.units) {
        const double N = u.stratum == 1 ? 35000 : 15000;
        const double n = u.stratum == 1 ? 1500 : 3500;
        CHECK(u.weight > 0);
        CHECK(std::abs(u.weight * (n / N) - 1.0) <= 1e-12);
        CHECK(u.r == 0);
        CHECK(u.x.has_value());
    }
    CHECK(s.units.front().weight == doctest::Approx(23.33).epsilon(1e-3));
}

TEST_CASE("census sample is a permutation of the stratum") {
    const auto pop = toy_population();
    const auto s = draw_stratified_sample(pop, {{1, 10}, {2, 10}}, 2);
    CHECK(s.size() == 20);
    for (const auto& u : s.units) CHECK(u.weight == 1.0);
    CHECK(ht_total(s) == population_total(pop));
}

TEST_CASE("overdrawing a stratum is a design error") {
    CHECK_THROWS_AS(draw_stratified_sample(toy_population(), {{1, 11}, {2, 2}}, 1), DesignError);
}

TEST_CASE("HT total is unbiased over repeated samples") {
    PopulationSpec spec = scenario_spec();
    spec.stratum_sizes = {{1, 700}, {2, 300}};
    const auto pop = generate_population(spec, 21);
    const auto r = oracle::ht_resampling(pop, {{1, 30}, {2, 70}}, 1000, 22);
    CHECK(std::abs(r.mean - r.population_total) <= 3 * r.sd / std::sqrt(1000.0));
}

TEST_CASE("missingness rate matches its analytic value") {
    const auto pop = generate_population(scenario_spec(), 31);
    const auto s = draw_stratified_sample(pop, {{1, 1500}, {2, 3500}}, 32);
    const ResponseTruth gamma{-0.25, 0.1, 0.3, -1.1};
    const auto masked = impose_missingness(s, gamma, 33);
    // Analytic rate given the sampled (y, x).
    double expected = 0.0;
    for (const auto& u : s.units) {
        expected += oracle::normal_cdf(gamma[0] + (u.y == 2 ? gamma[1] : 0) + (u.y == 3 ? gamma[2] : 0) +
                                       gamma[3] * *u.x);
    }
    const double n = static_cast<double>(s.size());
    const double p = expected / n;
    const double rate = static_cast<double>(masked.sample.missing_count()) / n;
    CHECK(std::abs(rate - p) <= 3 * std::sqrt(p * (1 - p) / n));
    CHECK(rate == doctest::Approx(0.30).epsilon(0.1));

    std::size_t absent = 0;
    std::size_t flagged = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const auto& u = masked.sample.units[i];
        absent += u.x ? 0 : 1;
        flagged += u.r;
        CHECK(masked.truth.unsealed().units[i].x == s.units[i].x);
        if (!u.missing()) CHECK(u.x == s.units[i].x);
    }
    CHECK(absent == flagged);
}

TEST_CASE("extreme and flat response models") {
    const auto pop = generate_population(scenario_spec(), 41);
    const auto s = draw_stratified_sample(pop, {{1, 1500}, {2, 3500}}, 42);
    CHECK(impose_missingness(s, {-8, 0, 0, 0}, 43).sample.missing_count() == 0);
    const double rate = static_cast<double>(impose_missingness(s, {0, 0, 0, 0}, 44).sample.missing_count()) / 5000.0;
    CHECK(std::abs(rate - 0.5) <= 3 * std::sqrt(0.25 / 5000.0));
}

TEST_CASE("missingness needs a fully observed sample") {
    const auto pop = generate_population(scenario_spec(), 45);
    const auto s = draw_stratified_sample(pop, {{1, 15}, {2, 35}}, 46);
    const auto masked = impose_missingness(s, {0, 0, 0, 0}, 47);
    CHECK_THROWS_AS(impose_missingness(masked.sample, {0, 0, 0, 0}, 48), CompletenessError);
}

TEST_CASE("population totals") {
    StratifiedPopulation pop;
    pop.stratum_sizes = {{1, 3}};
    pop.units = {{1, 1, 1}, {1, 2, 1}, {1, 3, 1}};
    CHECK(population_total(pop) == 3);
    for (auto& u : pop.units) u.x = 0;
    CHECK(population_total(pop) == 0);
    CHECK(population_total(generate_population(scenario_spec(), 51)) == doctest::Approx(25026).epsilon(0.03));
}

TEST_CASE("ht_total") {
    SurveySample s;
    s.units = {{1, 2.0, 1, 1, 0}, {1, 3.0, 1, 0, 0}, {1, 5.0, 1, 1, 0}};
    CHECK(ht_total(s) == 7.0);
    for (auto& u : s.units) u.x = 0;
    CHECK(ht_total(s) == 0.0);
    s.units[1].x.reset();
    s.units[1].r = 1;
    CHECK_THROWS_AS(ht_total(s), CompletenessError);
}

TEST_CASE("theoretical margin variance") {
    auto pop = toy_population();
    const auto v = theoretical_stratum_variances(pop, {{1, 4}, {2, 4}});
    const double total = v.at(1) + v.at(2);
    CHECK(std::abs(total - oracle::enumerated_ht_variance(pop, {{1, 4}, {2, 4}})) <= 1e-9);

    const auto census = theoretical_stratum_variances(pop, {{1, 10}, {2, 10}});
    CHECK(census.at(1) == 0.0);
    for (auto& u : pop.units) {
        if (u.stratum == 2) u.x = 1;
    }
    CHECK(theoretical_stratum_variances(pop, {{1, 4}, {2, 4}}).at(2) == 0.0);

    StratifiedPopulation tiny;
    tiny.stratum_sizes = {{1, 1}};
    tiny.units = {{1, 1, 1}};
    CHECK_THROWS_AS(theoretical_stratum_variances(tiny, {{1, 1}}), DesignError);
}

TEST_CASE("theoretical margin scopes") {
    const auto pop = toy_population();
    const auto overall = theoretical_margin(pop, {{1, 4}, {2, 4}}, MarginScope::Overall);
    const auto strata = theoretical_margin(pop, {{1, 4}, {2, 4}}, MarginScope::PerStratum);
    CHECK(overall.overall_entry().total == 10.0);
    CHECK(strata.strata().at(1).total == 5.0);
    CHECK(overall.overall_entry().variance ==
          doctest::Approx(strata.strata().at(1).variance + strata.strata().at(2).variance));
}

TEST_CASE("auxiliary margin invariants") {
    CHECK_THROWS_AS(AuxiliaryMargin::overall(10.0, 0.0), ParameterDomainError);
    CHECK_THROWS_AS(AuxiliaryMargin::per_stratum({{1, {5.0, -1.0}}}), ParameterDomainError);
    const auto m = AuxiliaryMargin::per_stratum({{1, {12.0, 1.0}}});
    CHECK_THROWS_AS(m.validate_against({{1, 10}}), ParameterDomainError);
    CHECK_NOTHROW(AuxiliaryMargin::per_stratum({{1, {10.0, 1.0}}}).validate_against({{1, 10}}));
}

TEST_CASE("generation is deterministic in the seed") {
    PopulationSpec spec = scenario_spec();
    spec.stratum_sizes = {{1, 700}, {2, 300}};
    const auto a = generate_population(spec, 99);
    const auto b = generate_population(spec, 99);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.units.size(); ++i) {
        CHECK(a.units[i].y == b.units[i].y);
        CHECK(a.units[i].x == b.units[i].x);
    }
    std::ostringstream sa;
    std::ostringstream sb;
    write_sample_csv(sa, impose_missingness(draw_stratified_sample(a, {{1, 30}, {2, 70}}, 5), {0, 0, 0, 0}, 6).sample);
    write_sample_csv(sb, impose_missingness(draw_stratified_sample(b, {{1, 30}, {2, 70}}, 5), {0, 0, 0, 0}, 6).sample);
    CHECK(sa.str() == sb.str());
}

TEST_CASE("sample csv round trip") {
    const auto pop = generate_population(scenario_spec(), 61);
    const auto s = impose_missingness(draw_stratified_sample(pop, {{1, 150}, {2, 350}}, 62), {0, 0, 0, 0}, 63).sample;
    std::ostringstream out;
    write_sample_csv(out, s);
    CHECK(out.str().rfind("stratum,weight,y,x,r\n", 0) == 0);
    const auto back = parse_sample_csv(out.str());
    REQUIRE(back.size() == s.size());
    CHECK(back.stratum_sizes == s.stratum_sizes);
    CHECK(back.stratum_draws == s.stratum_draws);
    for (std::size_t i = 0; i < s.size(); ++i) {
        CHECK(back.units[i].weight == s.units[i].weight);
        CHECK(back.units[i].x == s.units[i].x);
        CHECK(back.units[i].r == s.units[i].r);
    }
}

TEST_CASE("sample csv schema errors name the rows") {
    const std::string text =
        "stratum,weight,y,x,r\n"
        "1,2.5,1,1,0\n"
        "1,abc,2,0,0\n"
        "1,2.5,4,0,0\n"
        "1,2.5,2,,0\n"
        "1,2.5,2,1,1\n";
    try {
        parse_sample_csv(text);
        FAIL("expected a schema error");
    } catch (const SchemaError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("line 3") != std::string::npos);
        CHECK(msg.find("line 4") != std::string::npos);
        CHECK(msg.find("line 5") != std::string::npos);
        CHECK(msg.find("line 6") != std::string::npos);
        CHECK(msg.find("line 2") == std::string::npos);
    }
    CHECK_THROWS_AS(parse_sample_csv("stratum,y\n1,2\n"), SchemaError);
}

TEST_CASE("csv quoting") {
    const auto rows = csv::parse("a,\"b,c\",\"d\"\"e\"\n\"multi\nline\",x\n");
    REQUIRE(rows.size() == 2);
    CHECK(rows[0][1] == "b,c");
    CHECK(rows[0][2] == "d\"e");
    CHECK(rows[1][0] == "multi\nline");
    CHECK(csv::escape("plain") == "plain");
    CHECK(csv::escape("a,b") == "\"a,b\"");
    CHECK(std::stod(csv::format_double(0.1 + 0.2)) == 0.1 + 0.2);
}
