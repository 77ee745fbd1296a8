#include "anmi/survey.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "anmi/error.hpp"
#include "anmi/normal.hpp"
#include "anmi/rng.hpp"

namespace anmi {

namespace {

void check_theta(int stratum, const std::array<double, 3>& theta) {
    double sum = 0.0;
    for (double p : theta) {
        if (!(p >= 0.0 && p <= 1.0)) {
            throw ParameterDomainError("theta for stratum " + std::to_string(stratum) + " has an entry outside [0,1]");
        }
        sum += p;
    }
    if (std::fabs(sum - 1.0) > 1e-12) {
        throw ParameterDomainError("theta for stratum " + std::to_string(stratum) + " does not sum to 1");
    }
}

int draw_category(const std::array<double, 3>& theta, double u) {
    if (u < theta[0]) return 1;
    if (u < theta[0] + theta[1]) return 2;
    // Guard against theta[2] == 0 with rounding in the partial sums.
    if (theta[2] == 0.0) return theta[1] > 0.0 ? 2 : 1;
    return 3;
}

double outcome_predictor(const OutcomeTruth& alpha, int y) {
    return alpha[0] + (y == 2 ? alpha[1] : 0.0) + (y == 3 ? alpha[2] : 0.0);
}

struct StratumMoments {
    std::int64_t count = 0;
    double sum = 0.0;
    double sum_sq = 0.0;

    [[nodiscard]] double variance() const {
        if (count < 2) return 0.0;
        const double mean = sum / static_cast<double>(count);
        const double ss = sum_sq - static_cast<double>(count) * mean * mean;
        return std::max(0.0, ss) / static_cast<double>(count - 1);
    }
};

double srswor_variance(std::int64_t N, std::int64_t n, double s2) {
    const double Nd = static_cast<double>(N);
    const double nd = static_cast<double>(n);
    return Nd * Nd * (1.0 - nd / Nd) * s2 / nd;
}

}  // namespace

std::size_t SurveySample::missing_count() const noexcept {
    std::size_t count = 0;
    for (const auto& u : units) count += u.missing() ? 1 : 0;
    return count;
}

AuxiliaryMargin AuxiliaryMargin::overall(double total, double variance) {
    if (!(variance > 0.0)) throw ParameterDomainError("margin variance must be strictly positive");
    if (!std::isfinite(total)) throw ParameterDomainError("margin total must be finite");
    AuxiliaryMargin m;
    m.scope_ = MarginScope::Overall;
    m.overall_ = {total, variance};
    return m;
}

AuxiliaryMargin AuxiliaryMargin::per_stratum(std::map<int, MarginEntry> entries) {
    if (entries.empty()) throw ParameterDomainError("per-stratum margin needs at least one stratum");
    for (const auto& [s, e] : entries) {
        if (!(e.variance > 0.0)) {
            throw ParameterDomainError("margin variance for stratum " + std::to_string(s) + " must be strictly positive");
        }
        if (!(e.total >= 0.0)) {
            throw ParameterDomainError("margin total for stratum " + std::to_string(s) + " must be nonnegative");
        }
    }
    AuxiliaryMargin m;
    m.scope_ = MarginScope::PerStratum;
    m.strata_ = std::move(entries);
    return m;
}

const MarginEntry& AuxiliaryMargin::overall_entry() const {
    if (scope_ != MarginScope::Overall) throw ParameterDomainError("margin is per-stratum, not overall");
    return overall_;
}

const std::map<int, MarginEntry>& AuxiliaryMargin::strata() const {
    if (scope_ != MarginScope::PerStratum) throw ParameterDomainError("margin is overall, not per-stratum");
    return strata_;
}

void AuxiliaryMargin::validate_against(const StratumCounts& stratum_sizes) const {
    if (scope_ == MarginScope::Overall) return;
    for (const auto& [s, e] : strata_) {
        auto it = stratum_sizes.find(s);
        if (it == stratum_sizes.end()) {
            throw ParameterDomainError("margin names stratum " + std::to_string(s) + " which is not in the sample");
        }
        if (e.total > static_cast<double>(it->second)) {
            throw ParameterDomainError("margin total for stratum " + std::to_string(s) + " exceeds N_s");
        }
    }
    for (const auto& [s, n] : stratum_sizes) {
        if (!strata_.contains(s)) {
            throw ParameterDomainError("per-stratum margin is missing stratum " + std::to_string(s));
        }
    }
}

StratifiedPopulation generate_population(const PopulationSpec& spec, std::uint64_t seed) {
    if (spec.stratum_sizes.empty()) throw ParameterDomainError("population needs at least one stratum");
    for (const auto& [s, size] : spec.stratum_sizes) {
        if (size <= 0) throw ParameterDomainError("stratum " + std::to_string(s) + " size must be positive");
        auto it = spec.theta_by_stratum.find(s);
        if (it == spec.theta_by_stratum.end()) {
            throw ParameterDomainError("no theta given for stratum " + std::to_string(s));
        }
        check_theta(s, it->second);
    }

    Rng rng(seed);
    StratifiedPopulation pop;
    pop.stratum_sizes = spec.stratum_sizes;
    const auto total = std::accumulate(spec.stratum_sizes.begin(), spec.stratum_sizes.end(), std::int64_t{0},
                                       [](std::int64_t acc, const auto& kv) { return acc + kv.second; });
    pop.units.reserve(static_cast<std::size_t>(total));

    std::array<double, 3> x_prob{};
    for (int y = 1; y <= 3; ++y) x_prob[y - 1] = normal_cdf(outcome_predictor(spec.alpha, y));

    for (const auto& [s, size] : spec.stratum_sizes) {
        const auto& theta = spec.theta_by_stratum.at(s);
        for (std::int64_t i = 0; i < size; ++i) {
            PopulationUnit u;
            u.stratum = s;
            u.y = draw_category(theta, rng.uniform());
            u.x = rng.bernoulli(x_prob[u.y - 1]) ? 1 : 0;
            pop.units.push_back(u);
        }
    }
    return pop;
}

SurveySample draw_stratified_sample(const StratifiedPopulation& pop, const StratumCounts& draws, std::uint64_t seed) {
    std::map<int, std::vector<std::size_t>> members;
    for (std::size_t i = 0; i < pop.units.size(); ++i) members[pop.units[i].stratum].push_back(i);

    for (const auto& [s, n] : draws) {
        auto it = members.find(s);
        const std::int64_t N = it == members.end() ? 0 : static_cast<std::int64_t>(it->second.size());
        if (n < 0 || n > N) {
            throw DesignError("cannot draw " + std::to_string(n) + " units from stratum " + std::to_string(s) +
                              " of size " + std::to_string(N));
        }
    }

    Rng rng(seed);
    SurveySample sample;
    sample.stratum_draws = draws;
    for (const auto& [s, n] : draws) {
        auto& idx = members[s];
        const auto N = static_cast<std::int64_t>(idx.size());
        sample.stratum_sizes[s] = N;
        if (n == 0) continue;
        const double weight = static_cast<double>(N) / static_cast<double>(n);
        // Partial Fisher-Yates: the first n slots end up a uniform draw without replacement.
        for (std::int64_t k = 0; k < n; ++k) {
            const auto remaining = static_cast<std::uint64_t>(N - k);
            const auto j = k + static_cast<std::int64_t>(std::uniform_int_distribution<std::uint64_t>{0, remaining - 1}(
                                   rng.engine()));
            std::swap(idx[static_cast<std::size_t>(k)], idx[static_cast<std::size_t>(j)]);
            const auto& pu = pop.units[idx[static_cast<std::size_t>(k)]];
            sample.units.push_back(SampleUnit{s, weight, pu.y, pu.x, 0});
        }
    }
    return sample;
}

MaskedSample impose_missingness(const SurveySample& sample, const ResponseTruth& gamma, std::uint64_t seed) {
    if (!sample.complete()) throw CompletenessError("impose_missingness needs a fully observed sample");
    Rng rng(seed);
    MaskedSample out{sample, SealedTruth(sample)};
    for (auto& u : out.sample.units) {
        const double eta = gamma[0] + (u.y == 2 ? gamma[1] : 0.0) + (u.y == 3 ? gamma[2] : 0.0) + gamma[3] * *u.x;
        if (rng.bernoulli(normal_cdf(eta))) {
            u.r = 1;
            u.x.reset();
        }
    }
    return out;
}

double population_total(const StratifiedPopulation& pop) {
    double total = 0.0;
    for (const auto& u : pop.units) total += u.x;
    return total;
}

std::map<int, double> population_totals_by_stratum(const StratifiedPopulation& pop) {
    std::map<int, double> totals;
    for (const auto& [s, n] : pop.stratum_sizes) totals[s] = 0.0;
    for (const auto& u : pop.units) totals[u.stratum] += u.x;
    return totals;
}

double ht_total(const SurveySample& sample) {
    double total = 0.0;
    for (const auto& [s, t] : ht_totals_by_stratum(sample)) total += t;
    return total;
}

std::map<int, double> ht_totals_by_stratum(const SurveySample& sample) {
    std::map<int, double> totals;
    for (const auto& [s, n] : sample.stratum_draws) totals[s] = 0.0;
    for (std::size_t i = 0; i < sample.units.size(); ++i) {
        const auto& u = sample.units[i];
        if (!u.x) throw CompletenessError("unit " + std::to_string(i) + " has missing x");
        totals[u.stratum] += u.weight * *u.x;
    }
    return totals;
}

std::map<int, double> theoretical_stratum_variances(const StratifiedPopulation& pop, const StratumCounts& draws) {
    std::map<int, StratumMoments> moments;
    for (const auto& u : pop.units) {
        auto& m = moments[u.stratum];
        ++m.count;
        m.sum += u.x;
        m.sum_sq += static_cast<double>(u.x) * u.x;
    }
    std::map<int, double> variances;
    for (const auto& [s, n] : draws) {
        const auto& m = moments[s];
        if (m.count < 2) throw DesignError("stratum " + std::to_string(s) + " needs N_s >= 2 for a variance");
        if (n > m.count || n <= 0) throw DesignError("invalid draw size for stratum " + std::to_string(s));
        variances[s] = srswor_variance(m.count, n, m.variance());
    }
    return variances;
}

namespace {

AuxiliaryMargin assemble_margin(const StratifiedPopulation& pop, const std::map<int, double>& variances,
                                MarginScope scope) {
    const auto totals = population_totals_by_stratum(pop);
    if (scope == MarginScope::Overall) {
        double t = 0.0;
        double v = 0.0;
        for (const auto& [s, var] : variances) {
            t += totals.at(s);
            v += var;
        }
        return AuxiliaryMargin::overall(t, v);
    }
    std::map<int, MarginEntry> entries;
    for (const auto& [s, var] : variances) entries[s] = MarginEntry{totals.at(s), var};
    return AuxiliaryMargin::per_stratum(std::move(entries));
}

}  // namespace

AuxiliaryMargin theoretical_margin(const StratifiedPopulation& pop, const StratumCounts& draws, MarginScope scope) {
    return assemble_margin(pop, theoretical_stratum_variances(pop, draws), scope);
}

AuxiliaryMargin sample_based_margin(const StratifiedPopulation& pop, const SurveySample& complete, MarginScope scope) {
    return assemble_margin(pop, design_variances_by_stratum(complete), scope);
}

std::map<int, double> design_variances_by_stratum(const SurveySample& complete, bool with_fpc) {
    std::map<int, StratumMoments> moments;
    for (std::size_t i = 0; i < complete.units.size(); ++i) {
        const auto& u = complete.units[i];
        if (!u.x) throw CompletenessError("unit " + std::to_string(i) + " has missing x");
        auto& m = moments[u.stratum];
        ++m.count;
        m.sum += *u.x;
        m.sum_sq += static_cast<double>(*u.x) * *u.x;
    }
    std::map<int, double> variances;
    for (const auto& [s, m] : moments) {
        if (m.count < 2) throw DesignError("stratum " + std::to_string(s) + " needs n_s >= 2 for a variance");
        auto it = complete.stratum_sizes.find(s);
        if (it == complete.stratum_sizes.end()) throw DesignError("unknown N_s for stratum " + std::to_string(s));
        const double N = static_cast<double>(it->second);
        const double n = static_cast<double>(m.count);
        const double fpc = with_fpc ? (1.0 - n / N) : 1.0;
        variances[s] = N * N * fpc * m.variance() / n;
    }
    return variances;
}

}  // namespace anmi
