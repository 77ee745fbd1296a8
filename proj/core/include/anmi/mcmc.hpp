#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "anmi/models.hpp"
#include "anmi/rng.hpp"
#include "anmi/sampling.hpp"
#include "anmi/survey.hpp"

namespace anmi {

/// The four imputation strategies.
///  - MarWeight: stratum term in the x model; response model without x; no margin.
///  - AnWeight: stratum term in the x model; AN response model; no margin.
///  - AnConstraint: plain x model; AN response model; margin enforced by rejection.
///  - AnConstraintWeight: stratum term in the x model; AN response model; margin.
enum class Method { MarWeight, AnWeight, AnConstraint, AnConstraintWeight };

inline constexpr std::array<Method, 4> kAllMethods{Method::MarWeight, Method::AnWeight, Method::AnConstraint,
                                                    Method::AnConstraintWeight};

struct MethodTraits {
    bool response_has_x;
    bool outcome_has_stratum;
    bool uses_margin;
};

constexpr MethodTraits traits(Method m) noexcept {
    switch (m) {
        case Method::MarWeight: return {false, true, false};
        case Method::AnWeight: return {true, true, false};
        case Method::AnConstraint: return {true, false, true};
        case Method::AnConstraintWeight: return {true, true, true};
    }
    return {false, false, false};
}

/// Display name, e.g. "AN+Constraint".
std::string_view method_name(Method m) noexcept;
std::string_view method_description(Method m) noexcept;
/// Accepts display names and identifier spellings (AN_CONSTRAINT, an-constraint).
std::optional<Method> parse_method(std::string_view text);

struct ChainSettings {
    std::int64_t iterations = 10000;
    std::int64_t burn_in = 5000;
    std::int64_t thin = 100;
    Method method = Method::AnConstraint;
    std::uint64_t seed = 1;
    /// Replace the margin variance(s) at the end of burn-in with the average
    /// design variance of completed datasets saved during burn-in.
    bool refresh_margin_variance = false;
    /// Non-overlapping window used for the low-acceptance warning.
    std::int64_t warning_window = 500;
    double warning_threshold = 0.1;

    /// Number of completed datasets the settings produce.
    [[nodiscard]] std::int64_t retained_count() const noexcept;
    /// Throws ParameterDomainError for inconsistent settings.
    void validate() const;
};

struct ChainState {
    std::array<double, 3> theta{1.0 / 3, 1.0 / 3, 1.0 / 3};
    ProbitCoefficients outcome;
    ProbitCoefficients response;
    /// One entry per missing unit, in sample order.
    std::vector<int> imputations;
    /// HT totals of the completed data, per stratum.
    std::map<int, double> completed_totals;

    [[nodiscard]] double completed_total() const noexcept;
};

/// Precomputed view of a sample for repeated imputation steps.
class ImputationProblem {
public:
    /// Keeps a reference to `sample`, which must outlive the problem.
    explicit ImputationProblem(const SurveySample& sample);

    [[nodiscard]] const SurveySample& sample() const noexcept { return *sample_; }
    [[nodiscard]] const std::vector<int>& strata() const noexcept { return strata_; }
    [[nodiscard]] std::size_t stratum_level(int stratum) const;
    [[nodiscard]] const std::vector<std::size_t>& missing_units() const noexcept { return missing_; }
    /// Missing slots (indices into imputations) belonging to each stratum.
    [[nodiscard]] const std::map<int, std::vector<std::size_t>>& missing_by_stratum() const noexcept {
        return missing_by_stratum_;
    }
    /// HT total over respondents only, per stratum.
    [[nodiscard]] const std::map<int, double>& observed_totals() const noexcept { return observed_totals_; }

    /// Completed HT totals for an imputation vector.
    [[nodiscard]] std::map<int, double> completed_totals(const std::vector<int>& imputations) const;
    [[nodiscard]] SurveySample complete(const std::vector<int>& imputations) const;

private:
    const SurveySample* sample_;
    std::vector<int> strata_;
    std::vector<std::size_t> missing_;
    std::map<int, std::vector<std::size_t>> missing_by_stratum_;
    std::map<int, double> observed_totals_;
};

/// Covariates of a unit for a given coefficient record.
ProbitCovariates covariates_for(const ProbitCoefficients& coef, int y, std::optional<int> x, std::size_t stratum_level);

/// Posterior predictive Pr(x* = 1) for a nonrespondent with outcome y in the
/// given stratum level. Without an x term in the response model this is the
/// outcome probability alone.
double imputation_probability(int y, std::size_t stratum_level, const ProbitCoefficients& outcome,
                              const ProbitCoefficients& response);

int impute_missing_x(int y, std::size_t stratum_level, const ProbitCoefficients& outcome,
                     const ProbitCoefficients& response, Rng& rng);

/// N(candidate; T, V) / N(current; T, V). May exceed 1.
double constraint_acceptance_ratio(double candidate_total, double current_total, const MarginEntry& margin);

/// One S1-S3 style update of all missing x. The full vector (or each
/// stratum's sub-vector under a per-stratum margin) is proposed from the
/// posterior predictive and accepted with the margin density ratio. Without
/// a margin every proposal is accepted. Returns one flag per block.
std::vector<bool> metropolis_imputation_step(ChainState& state, const ImputationProblem& problem,
                                             const AuxiliaryMargin* margin, Rng& rng);

struct AcceptanceTrace {
    /// Strata of the accept/reject blocks; a single 0 for an overall margin.
    std::vector<int> blocks;
    /// accepted[block][iteration] over all iterations (burn-in included).
    std::vector<std::vector<std::uint8_t>> accepted;
    std::int64_t burn_in = 0;
    /// Post-burn-in acceptance ratio over every block.
    double overall_ratio = 1.0;
    /// Post-burn-in ratio per block stratum (per-stratum margins only).
    std::map<int, double> stratum_ratios;
    std::vector<std::string> warnings;
};

struct ParameterDraw {
    std::int64_t iteration = 0;
    std::array<double, 3> theta{};
    ProbitCoefficients outcome;
    ProbitCoefficients response;
    std::map<int, double> completed_totals;
    std::vector<bool> accepted;
};

struct ChainResult {
    std::vector<SurveySample> completed;
    AcceptanceTrace trace;
    std::vector<ParameterDraw> draws;
    /// Non-reference strata, in the order of stratum terms.
    std::vector<int> stratum_terms;
    /// Margin actually used (after any variance refresh).
    std::optional<AuxiliaryMargin> margin_used;
};

/// Metropolis-within-Gibbs sampler. Each iteration runs the imputation
/// step, the Dirichlet update for y, and latent-utility updates for the x
/// and response models.
class Chain {
public:
    Chain(const SurveySample& sample, std::optional<AuxiliaryMargin> margin, ChainSettings settings);
    Chain(const Chain&) = delete;
    Chain& operator=(const Chain&) = delete;

    /// Advance one full Gibbs cycle; returns the imputation accept flags.
    std::vector<bool> step();

    [[nodiscard]] const ChainState& state() const noexcept { return state_; }
    [[nodiscard]] const ImputationProblem& problem() const noexcept { return problem_; }
    [[nodiscard]] std::int64_t iteration() const noexcept { return iteration_; }
    [[nodiscard]] const std::optional<AuxiliaryMargin>& margin() const noexcept { return margin_; }
    void set_margin(AuxiliaryMargin margin) { margin_ = std::move(margin); }

private:
    void update_outcome();
    void update_response();

    struct CellCounts {
        std::vector<std::int64_t> ones;
        std::vector<std::int64_t> zeros;
    };

    SurveySample sample_;
    ImputationProblem problem_;
    std::optional<AuxiliaryMargin> margin_;
    ChainSettings settings_;
    Rng rng_;
    ChainState state_;
    std::int64_t iteration_ = 0;
    std::array<double, 3> y_counts_{};
    // Respondent contributions to the grouped probit data; imputed units are
    // added on top each iteration.
    ProbitCells outcome_cells_;
    ProbitCells response_cells_;
    CellCounts observed_outcome_;
    CellCounts observed_response_;
    std::vector<std::size_t> missing_outcome_cell_;
    std::vector<std::size_t> missing_y_;
};

ChainResult run_chain(const SurveySample& sample, const std::optional<AuxiliaryMargin>& margin,
                      const ChainSettings& settings);

/// One row per retained draw: iteration, theta, coefficients, totals, flags.
void write_trace_csv(std::ostream& out, const ChainResult& result);

}  // namespace anmi
