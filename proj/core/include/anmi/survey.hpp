#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <vector>

namespace anmi {

/// Stratum label -> count (N_s for populations, n_s for draws).
using StratumCounts = std::map<int, std::int64_t>;

/// Coefficients (intercept, effect of y = 2, effect of y = 3) of a probit
/// link without an x term.
using OutcomeTruth = std::array<double, 3>;

/// Coefficients (intercept, y = 2, y = 3, x) of the probit response model.
using ResponseTruth = std::array<double, 4>;

struct PopulationUnit {
    int stratum = 1;
    int y = 1;
    int x = 0;
};

/// Finite population of N units partitioned into strata.
struct StratifiedPopulation {
    std::vector<PopulationUnit> units;
    StratumCounts stratum_sizes;

    [[nodiscard]] std::int64_t size() const noexcept { return static_cast<std::int64_t>(units.size()); }
};

struct SampleUnit {
    int stratum = 1;
    double weight = 1.0;
    int y = 1;
    std::optional<int> x;  ///< absent iff r == 1
    int r = 0;

    [[nodiscard]] bool missing() const noexcept { return r == 1; }
};

/// Sampled units with base weights N_s / n_s. `stratum_sizes` keeps the
/// population counts N_s the weights were derived from.
struct SurveySample {
    std::vector<SampleUnit> units;
    StratumCounts stratum_draws;
    StratumCounts stratum_sizes;

    [[nodiscard]] std::size_t size() const noexcept { return units.size(); }
    [[nodiscard]] std::size_t missing_count() const noexcept;
    [[nodiscard]] bool complete() const noexcept { return missing_count() == 0; }
};

/// Erased true x values. Only scoring code in the simulation harness may
/// look inside; the imputation engine has no read path to this type.
class SealedTruth {
public:
    SealedTruth() = default;
    explicit SealedTruth(SurveySample complete) : complete_(std::move(complete)) {}

    /// The sample as it was before missingness was imposed.
    [[nodiscard]] const SurveySample& unsealed() const noexcept { return complete_; }

private:
    SurveySample complete_;
};

struct MaskedSample {
    SurveySample sample;
    SealedTruth truth;
};

struct MarginEntry {
    double total = 0.0;
    double variance = 1.0;
};

enum class MarginScope { Overall, PerStratum };

/// Known population total(s) of x with the variance of the HT estimator
/// around them.
class AuxiliaryMargin {
public:
    static AuxiliaryMargin overall(double total, double variance);
    static AuxiliaryMargin per_stratum(std::map<int, MarginEntry> entries);

    [[nodiscard]] MarginScope scope() const noexcept { return scope_; }
    /// Valid only for Overall margins.
    [[nodiscard]] const MarginEntry& overall_entry() const;
    /// Valid only for PerStratum margins.
    [[nodiscard]] const std::map<int, MarginEntry>& strata() const;

    /// Check per-stratum totals against known stratum sizes.
    void validate_against(const StratumCounts& stratum_sizes) const;

private:
    MarginScope scope_ = MarginScope::Overall;
    MarginEntry overall_{};
    std::map<int, MarginEntry> strata_;
};

struct PopulationSpec {
    std::map<int, std::array<double, 3>> theta_by_stratum;
    OutcomeTruth alpha{};
    StratumCounts stratum_sizes;
};

StratifiedPopulation generate_population(const PopulationSpec& spec, std::uint64_t seed);

SurveySample draw_stratified_sample(const StratifiedPopulation& pop, const StratumCounts& draws,
                                    std::uint64_t seed);

MaskedSample impose_missingness(const SurveySample& sample, const ResponseTruth& gamma, std::uint64_t seed);

double population_total(const StratifiedPopulation& pop);

/// Per-stratum sums of x over the population.
std::map<int, double> population_totals_by_stratum(const StratifiedPopulation& pop);

/// sum_i w_i x_i; throws CompletenessError if any x is missing.
double ht_total(const SurveySample& sample);

std::map<int, double> ht_totals_by_stratum(const SurveySample& sample);

/// Estimated design variance of the HT total per stratum from a complete
/// sample: N_s^2 (1 - n_s/N_s) s_s^2 / n_s, or without the finite population
/// correction when `with_fpc` is false. Throws DesignError when n_s < 2.
std::map<int, double> design_variances_by_stratum(const SurveySample& complete, bool with_fpc = true);

/// Design variance of the HT total under stratified SRSWOR, from the
/// population values: N_s^2 (1 - n_s/N_s) S_s^2 / n_s per stratum.
std::map<int, double> theoretical_stratum_variances(const StratifiedPopulation& pop, const StratumCounts& draws);

/// Margin with per-population totals and theoretical variances.
AuxiliaryMargin theoretical_margin(const StratifiedPopulation& pop, const StratumCounts& draws, MarginScope scope);

/// Same as theoretical_margin but with variances estimated from a complete
/// sample (sample variance s_s^2 in place of S_s^2).
AuxiliaryMargin sample_based_margin(const StratifiedPopulation& pop, const SurveySample& complete, MarginScope scope);

}  // namespace anmi
