#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "anmi/estimators.hpp"
#include "anmi/mcmc.hpp"
#include "anmi/survey.hpp"

namespace anmi {

/// Where the margin variance comes from.
enum class MarginVarianceSource {
    Population,  ///< theoretical SRSWOR variance from the population values (default)
    Sample,      ///< estimated from the realized sample before missingness
};

struct ScenarioConfig {
    std::string id;
    std::string description;
    std::map<int, std::array<double, 3>> theta_by_stratum;
    OutcomeTruth alpha{};
    ResponseTruth gamma{};
    StratumCounts stratum_sizes;
    StratumCounts stratum_draws;
    MarginScope margin_scope = MarginScope::Overall;
    MarginVarianceSource margin_variance = MarginVarianceSource::Population;
    VarianceConvention variance_convention = VarianceConvention::WithoutReplacement;
    std::vector<Method> methods{kAllMethods.begin(), kAllMethods.end()};
    int runs = 10;
    /// The method and seed fields are filled per chain.
    ChainSettings chain;
    std::uint64_t master_seed = 1;

    /// Throws ParameterDomainError when the configuration is unusable.
    void validate() const;
};

/// Built-in scenarios keyed by id: scenario1..scenario4 at full scale and a
/// "-desk" variant of each (sizes / 5, 4000/2000/40 chain).
std::map<std::string, ScenarioConfig> builtin_scenarios();

/// JSON round trip for configs. `from_json` accepts an optional "base"
/// naming a built-in scenario whose values are then overridden.
std::string scenario_to_json(const ScenarioConfig& config);
ScenarioConfig scenario_from_json(const std::string& text);

/// Canonical parameter order of the parameters table.
inline const std::vector<std::string>& parameter_names() {
    static const std::vector<std::string> names{"alpha0", "alpha12", "alpha13", "gamma0",
                                                "gamma12", "gamma13", "gamma2"};
    return names;
}

struct RunSeeds {
    int run = 0;
    std::uint64_t run_seed = 0;
    std::uint64_t population = 0;
    std::uint64_t sample = 0;
    std::uint64_t missingness = 0;
    std::map<Method, std::uint64_t> chains;
};

/// Seeds for run `run` (0-based) under `master_seed`.
RunSeeds derive_run_seeds(std::uint64_t master_seed, int run);

struct AcceptanceSummary {
    double mean = 0.0;
    double min = 0.0;
    double max = 0.0;
};

/// Per-run MI results for one method.
struct MethodRun {
    MIEstimate total;
    std::map<std::string, MIEstimate> parameters;
    double acceptance = 1.0;
    std::map<int, double> stratum_acceptance;
    std::size_t completed_datasets = 0;
    std::vector<std::string> warnings;
};

struct MethodSummary {
    Method method = Method::AnConstraint;
    RunAggregate total;
    std::map<std::string, RunAggregate> parameters;
    std::optional<AcceptanceSummary> acceptance;
    std::map<int, AcceptanceSummary> stratum_acceptance;
    std::vector<MethodRun> runs;
};

/// Complete-sample benchmark computed before missingness is imposed.
struct BenchmarkRun {
    TotalEstimate total;
    std::map<std::string, std::pair<double, double>> parameters;  // point, variance
};

struct ScenarioReport {
    ScenarioConfig config;
    std::vector<RunSeeds> seeds;
    std::vector<double> population_totals;
    std::vector<double> missing_rates;
    double population_total = 0.0;  ///< mean over runs
    RunAggregate no_missing_total;
    std::map<std::string, RunAggregate> no_missing_parameters;
    std::vector<BenchmarkRun> no_missing_runs;
    std::vector<MethodSummary> methods;
    std::vector<std::string> warnings;

    [[nodiscard]] const MethodSummary& summary(Method m) const;
    /// Run-averaged HT total minus the run-averaged population total.
    [[nodiscard]] double bias(Method m) const;
};

struct HarnessOptions {
    /// Worker threads; 0 picks the hardware concurrency.
    unsigned jobs = 0;
    /// Directory for per-chain trace CSVs; none written when empty.
    std::filesystem::path trace_dir;
};

/// Estimates from one completed (or complete) dataset.
struct CompletedEstimates {
    TotalEstimate total;
    std::map<std::string, std::pair<double, double>> parameters;  // point, variance
};

/// T_X with SE, weighted alpha fit, and (when `response_has_x` decides the
/// formula) the unweighted gamma fit. A gamma fit that fails for lack of
/// nonrespondents is left out.
CompletedEstimates estimate_completed(const SurveySample& completed, bool response_has_x, bool fit_response,
                                      VarianceConvention convention);

/// Rubin-combine per-dataset estimates for every estimand present in all of them.
std::pair<MIEstimate, std::map<std::string, MIEstimate>> combine_estimates(
    const std::vector<CompletedEstimates>& estimates);

ScenarioReport run_scenario(const ScenarioConfig& config, const HarnessOptions& options = {});

/// Table shaped like the printed results: a label column then numeric cells
/// (nullopt prints as an empty field).
struct ReportTable {
    std::vector<std::string> header;
    std::vector<std::string> labels;
    std::vector<std::vector<std::optional<double>>> cells;

    bool operator==(const ReportTable&) const = default;
};

ReportTable totals_table(const ScenarioReport& report);
ReportTable parameters_table(const ScenarioReport& report);

void write_table_csv(const std::filesystem::path& path, const ReportTable& table);
ReportTable read_table_csv(const std::filesystem::path& path);

enum class ReportFormat { Csv, Json };

std::string report_to_json(const ScenarioReport& report);
std::string manifest_json(const ScenarioReport& report);

/// Write the report into `dir`; returns the files written. CSV output is one
/// file per table; JSON output is a single report document. The manifest
/// `<id>_manifest.json` is always written.
std::vector<std::filesystem::path> emit_report(const ScenarioReport& report, const std::filesystem::path& dir,
                                               ReportFormat format);

}  // namespace anmi
