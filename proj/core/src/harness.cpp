#include "anmi/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
#include <thread>

#include <nlohmann/json.hpp>

#include "anmi/csv.hpp"
#include "anmi/error.hpp"

namespace anmi {

using nlohmann::json;

namespace {

constexpr std::uint64_t kPopulationStream = 1;
constexpr std::uint64_t kSampleStream = 2;
constexpr std::uint64_t kMissingnessStream = 3;
constexpr std::uint64_t kChainStreamBase = 10;

std::size_t method_index(Method m) {
    return static_cast<std::size_t>(std::find(kAllMethods.begin(), kAllMethods.end(), m) - kAllMethods.begin());
}

ScenarioConfig base_config() {
    ScenarioConfig c;
    c.theta_by_stratum = {{1, {0.5, 0.15, 0.35}}, {2, {0.1, 0.45, 0.45}}};
    c.stratum_sizes = {{1, 35000}, {2, 15000}};
    c.stratum_draws = {{1, 1500}, {2, 3500}};
    c.chain.iterations = 10000;
    c.chain.burn_in = 5000;
    c.chain.thin = 100;
    c.runs = 10;
    return c;
}

ScenarioConfig desk_variant(ScenarioConfig c) {
    c.id += "-desk";
    c.description += " (desk scale)";
    for (auto& [s, n] : c.stratum_sizes) n /= 5;
    for (auto& [s, n] : c.stratum_draws) n /= 5;
    c.chain.iterations = 4000;
    c.chain.burn_in = 2000;
    c.chain.thin = 40;
    return c;
}

std::string scope_name(MarginScope s) { return s == MarginScope::Overall ? "overall" : "per-stratum"; }

MarginScope parse_scope(const std::string& s) {
    if (s == "overall") return MarginScope::Overall;
    if (s == "per-stratum") return MarginScope::PerStratum;
    throw ParameterDomainError("unknown margin scope '" + s + "'");
}

json counts_json(const StratumCounts& counts) {
    json j = json::object();
    for (const auto& [s, n] : counts) j[std::to_string(s)] = n;
    return j;
}

StratumCounts counts_from_json(const json& j) {
    StratumCounts out;
    for (const auto& [key, value] : j.items()) out[std::stoi(key)] = value.get<std::int64_t>();
    return out;
}

void require(bool ok, const std::string& message) {
    if (!ok) throw ParameterDomainError(message);
}

}  // namespace

void ScenarioConfig::validate() const {
    require(!methods.empty(), "scenario needs at least one method");
    require(runs >= 1, "scenario needs at least one run");
    require(!stratum_sizes.empty(), "scenario needs at least one stratum");
    for (const auto& [s, N] : stratum_sizes) {
        require(theta_by_stratum.contains(s), "no theta for stratum " + std::to_string(s));
        const auto& th = theta_by_stratum.at(s);
        require(std::all_of(th.begin(), th.end(), [](double p) { return p >= 0.0; }) &&
                    std::abs(th[0] + th[1] + th[2] - 1.0) <= 1e-9,
                "theta for stratum " + std::to_string(s) + " must be a probability vector");
        require(stratum_draws.contains(s), "no draw size for stratum " + std::to_string(s));
        require(stratum_draws.at(s) >= 2 && stratum_draws.at(s) <= N,
                "draw size for stratum " + std::to_string(s) + " must be in [2, N_s]");
    }
    chain.validate();
    require(chain.retained_count() >= 2, "chain must retain at least two completed datasets");
}

std::map<std::string, ScenarioConfig> builtin_scenarios() {
    std::map<std::string, ScenarioConfig> out;

    ScenarioConfig s1 = base_config();
    s1.id = "scenario1";
    s1.description = "strong x-y association, large departure from ignorability, overall margin";
    s1.alpha = {0.5, -0.5, -1.0};
    s1.gamma = {-0.25, 0.1, 0.3, -1.1};
    s1.margin_scope = MarginScope::Overall;
    s1.master_seed = 101;

    ScenarioConfig s2 = base_config();
    s2.id = "scenario2";
    s2.description = "weak x-y association, small departure from ignorability, overall margin";
    s2.alpha = {0.15, -0.45, -0.15};
    s2.gamma = {-1.0, -0.6, 1.4, -0.2};
    s2.margin_scope = MarginScope::Overall;
    s2.master_seed = 202;

    ScenarioConfig s3 = s1;
    s3.id = "scenario3";
    s3.description = "strong x-y association, large departure from ignorability, per-stratum margins";
    s3.margin_scope = MarginScope::PerStratum;
    s3.master_seed = 303;

    ScenarioConfig s4 = s2;
    s4.id = "scenario4";
    s4.description = "weak x-y association, small departure from ignorability, per-stratum margins";
    s4.margin_scope = MarginScope::PerStratum;
    s4.master_seed = 404;

    for (const auto& c : {s1, s2, s3, s4}) {
        out[c.id] = c;
        auto d = desk_variant(c);
        out[d.id] = d;
    }
    return out;
}

std::string scenario_to_json(const ScenarioConfig& c) {
    json theta = json::object();
    for (const auto& [s, t] : c.theta_by_stratum) theta[std::to_string(s)] = t;
    json methods = json::array();
    for (Method m : c.methods) methods.push_back(std::string(method_name(m)));
    json j{
        {"id", c.id},
        {"description", c.description},
        {"theta_by_stratum", theta},
        {"alpha", c.alpha},
        {"gamma", c.gamma},
        {"stratum_sizes", counts_json(c.stratum_sizes)},
        {"stratum_draws", counts_json(c.stratum_draws)},
        {"margin_scope", scope_name(c.margin_scope)},
        {"margin_variance", c.margin_variance == MarginVarianceSource::Population ? "population" : "sample"},
        {"variance_convention",
         c.variance_convention == VarianceConvention::WithoutReplacement ? "without-replacement" : "with-replacement"},
        {"methods", methods},
        {"runs", c.runs},
        {"chain",
         {{"iterations", c.chain.iterations},
          {"burn_in", c.chain.burn_in},
          {"thin", c.chain.thin},
          {"refresh_margin_variance", c.chain.refresh_margin_variance}}},
        {"master_seed", c.master_seed},
    };
    return j.dump(2);
}

ScenarioConfig scenario_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw SchemaError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw SchemaError("config must be a JSON object");

    try {
        ScenarioConfig c;
        if (j.contains("base")) {
            const auto builtins = builtin_scenarios();
            const auto name = j.at("base").get<std::string>();
            auto it = builtins.find(name);
            if (it == builtins.end()) throw SchemaError("unknown base scenario '" + name + "'");
            c = it->second;
        } else {
            c = base_config();
        }
        if (j.contains("id")) c.id = j["id"].get<std::string>();
        if (j.contains("description")) c.description = j["description"].get<std::string>();
        if (j.contains("theta_by_stratum")) {
            c.theta_by_stratum.clear();
            for (const auto& [key, value] : j["theta_by_stratum"].items()) {
                c.theta_by_stratum[std::stoi(key)] = value.get<std::array<double, 3>>();
            }
        }
        if (j.contains("alpha")) c.alpha = j["alpha"].get<OutcomeTruth>();
        if (j.contains("gamma")) c.gamma = j["gamma"].get<ResponseTruth>();
        if (j.contains("stratum_sizes")) c.stratum_sizes = counts_from_json(j["stratum_sizes"]);
        if (j.contains("stratum_draws")) c.stratum_draws = counts_from_json(j["stratum_draws"]);
        if (j.contains("margin_scope")) c.margin_scope = parse_scope(j["margin_scope"].get<std::string>());
        if (j.contains("margin_variance")) {
            const auto v = j["margin_variance"].get<std::string>();
            if (v == "population") {
                c.margin_variance = MarginVarianceSource::Population;
            } else if (v == "sample") {
                c.margin_variance = MarginVarianceSource::Sample;
            } else {
                throw SchemaError("margin_variance must be 'population' or 'sample'");
            }
        }
        if (j.contains("variance_convention")) {
            const auto v = j["variance_convention"].get<std::string>();
            if (v == "without-replacement") {
                c.variance_convention = VarianceConvention::WithoutReplacement;
            } else if (v == "with-replacement") {
                c.variance_convention = VarianceConvention::WithReplacement;
            } else {
                throw SchemaError("variance_convention must be 'without-replacement' or 'with-replacement'");
            }
        }
        if (j.contains("methods")) {
            c.methods.clear();
            for (const auto& m : j["methods"]) {
                auto parsed = parse_method(m.get<std::string>());
                if (!parsed) throw SchemaError("unknown method '" + m.get<std::string>() + "'");
                c.methods.push_back(*parsed);
            }
        }
        if (j.contains("runs")) c.runs = j["runs"].get<int>();
        if (j.contains("chain")) {
            const auto& ch = j["chain"];
            if (ch.contains("iterations")) c.chain.iterations = ch["iterations"].get<std::int64_t>();
            if (ch.contains("burn_in")) c.chain.burn_in = ch["burn_in"].get<std::int64_t>();
            if (ch.contains("thin")) c.chain.thin = ch["thin"].get<std::int64_t>();
            if (ch.contains("refresh_margin_variance")) {
                c.chain.refresh_margin_variance = ch["refresh_margin_variance"].get<bool>();
            }
        }
        if (j.contains("master_seed")) c.master_seed = j["master_seed"].get<std::uint64_t>();
        if (c.id.empty()) throw SchemaError("config needs an id");
        return c;
    } catch (const json::exception& e) {
        throw SchemaError(std::string("config has a field of the wrong type: ") + e.what());
    }
}

RunSeeds derive_run_seeds(std::uint64_t master_seed, int run) {
    RunSeeds s;
    s.run = run;
    s.run_seed = derive_seed(master_seed, static_cast<std::uint64_t>(run));
    s.population = derive_seed(s.run_seed, kPopulationStream);
    s.sample = derive_seed(s.run_seed, kSampleStream);
    s.missingness = derive_seed(s.run_seed, kMissingnessStream);
    for (Method m : kAllMethods) s.chains[m] = derive_seed(s.run_seed, kChainStreamBase + method_index(m));
    return s;
}

const MethodSummary& ScenarioReport::summary(Method m) const {
    for (const auto& s : methods) {
        if (s.method == m) return s;
    }
    throw ParameterDomainError(std::string("report has no results for ") + std::string(method_name(m)));
}

double ScenarioReport::bias(Method m) const { return summary(m).total.mean - population_total; }

CompletedEstimates estimate_completed(const SurveySample& completed, bool response_has_x, bool fit_response,
                                      VarianceConvention convention) {
    CompletedEstimates out;
    out.total = ht_with_se(completed, convention);
    const auto alpha = weighted_probit_fit(completed, OutcomeFormula{false}, convention);
    const char* alpha_names[] = {"alpha0", "alpha12", "alpha13"};
    for (Eigen::Index k = 0; k < 3; ++k) {
        const double se = alpha.standard_errors[k];
        out.parameters[alpha_names[k]] = {alpha.coefficients[k], se * se};
    }
    if (!fit_response) return out;
    try {
        const auto gamma = unweighted_probit_fit(completed, ResponseFormula{response_has_x});
        const char* gamma_names[] = {"gamma0", "gamma12", "gamma13", "gamma2"};
        for (Eigen::Index k = 0; k < gamma.coefficients.size(); ++k) {
            const double se = gamma.standard_errors[k];
            out.parameters[gamma_names[k]] = {gamma.coefficients[k], se * se};
        }
    } catch (const SeparationError&) {
        // No (or only) nonrespondents: the response model is not estimable.
    }
    return out;
}

std::pair<MIEstimate, std::map<std::string, MIEstimate>> combine_estimates(
    const std::vector<CompletedEstimates>& estimates) {
    std::vector<double> q;
    std::vector<double> u;
    for (const auto& e : estimates) {
        q.push_back(e.total.total);
        u.push_back(e.total.variance());
    }
    std::pair<MIEstimate, std::map<std::string, MIEstimate>> out;
    out.first = rubin_combine(q, u);
    for (const auto& name : parameter_names()) {
        q.clear();
        u.clear();
        for (const auto& e : estimates) {
            auto it = e.parameters.find(name);
            if (it == e.parameters.end()) break;
            q.push_back(it->second.first);
            u.push_back(it->second.second);
        }
        if (q.size() == estimates.size()) out.second[name] = rubin_combine(q, u);
    }
    return out;
}

namespace {

struct RunData {
    RunSeeds seeds;
    double population_total = 0.0;
    double missing_rate = 0.0;
    MaskedSample masked;
    AuxiliaryMargin margin = AuxiliaryMargin::overall(0.0, 1.0);
    BenchmarkRun benchmark;
};

RunData prepare_run(const ScenarioConfig& config, int run) {
    RunData d;
    d.seeds = derive_run_seeds(config.master_seed, run);
    const auto pop = generate_population(
        PopulationSpec{config.theta_by_stratum, config.alpha, config.stratum_sizes}, d.seeds.population);
    const auto sample = draw_stratified_sample(pop, config.stratum_draws, d.seeds.sample);
    d.population_total = population_total(pop);
    d.margin = config.margin_variance == MarginVarianceSource::Population
                   ? theoretical_margin(pop, config.stratum_draws, config.margin_scope)
                   : sample_based_margin(pop, sample, config.margin_scope);
    d.masked = impose_missingness(sample, config.gamma, d.seeds.missingness);
    d.missing_rate =
        static_cast<double>(d.masked.sample.missing_count()) / static_cast<double>(d.masked.sample.size());

    // Benchmark from the sealed pre-missingness sample; the response model is
    // fitted on the true x with the realized response indicators.
    SurveySample oracle = d.masked.truth.unsealed();
    for (std::size_t i = 0; i < oracle.units.size(); ++i) oracle.units[i].r = d.masked.sample.units[i].r;
    const auto bench = estimate_completed(oracle, true, true, config.variance_convention);
    d.benchmark.total = bench.total;
    d.benchmark.parameters = bench.parameters;
    return d;
}

MethodRun run_method_unchecked(const ScenarioConfig& config, const RunData& data, Method method,
                               const std::filesystem::path& trace_dir) {
    ChainSettings settings = config.chain;
    settings.method = method;
    settings.seed = data.seeds.chains.at(method);
    const auto tr = traits(method);
    const auto result = run_chain(data.masked.sample, tr.uses_margin ? std::optional(data.margin) : std::nullopt,
                                  settings);
    if (!trace_dir.empty()) {
        std::ofstream out(trace_dir / (config.id + "_run" + std::to_string(data.seeds.run + 1) + "_" +
                                       std::string(method_name(method)) + "_trace.csv"));
        write_trace_csv(out, result);
    }

    std::vector<CompletedEstimates> estimates;
    estimates.reserve(result.completed.size());
    for (const auto& completed : result.completed) {
        estimates.push_back(estimate_completed(completed, tr.response_has_x, true, config.variance_convention));
    }
    auto [total, params] = combine_estimates(estimates);

    MethodRun run;
    run.total = total;
    run.parameters = std::move(params);
    run.acceptance = result.trace.overall_ratio;
    run.stratum_acceptance = result.trace.stratum_ratios;
    run.completed_datasets = result.completed.size();
    for (const auto& w : result.trace.warnings) {
        run.warnings.push_back(std::string(method_name(method)) + ", run " + std::to_string(data.seeds.run + 1) +
                               ": " + w);
    }
    if (run.parameters.size() < (tr.response_has_x ? 7u : 6u)) {
        run.warnings.push_back(std::string(method_name(method)) + ", run " + std::to_string(data.seeds.run + 1) +
                               ": response model not estimable on completed data");
    }
    return run;
}

MethodRun run_method(const ScenarioConfig& config, const RunData& data, Method method,
                     const std::filesystem::path& trace_dir) {
    try {
        return run_method_unchecked(config, data, method, trace_dir);
    } catch (const Error& e) {
        throw ChainError(config.id + ", run " + std::to_string(data.seeds.run + 1) + ", " +
                         std::string(method_name(method)) + " (chain seed " +
                         std::to_string(data.seeds.chains.at(method)) + "): " + e.what());
    }
}

AcceptanceSummary summarize(const std::vector<double>& values) {
    AcceptanceSummary s;
    s.min = *std::min_element(values.begin(), values.end());
    s.max = *std::max_element(values.begin(), values.end());
    for (double v : values) s.mean += v / static_cast<double>(values.size());
    s.mean = std::clamp(s.mean, s.min, s.max);
    return s;
}

template <typename Fn>
void parallel_for(std::size_t count, unsigned jobs, Fn&& fn) {
    if (jobs == 0) jobs = std::max(1u, std::thread::hardware_concurrency());
    jobs = static_cast<unsigned>(std::min<std::size_t>(jobs, std::max<std::size_t>(count, 1)));
    std::vector<std::exception_ptr> errors(count);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < count; i = next++) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    if (jobs <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (unsigned t = 0; t < jobs; ++t) pool.emplace_back(worker);
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

}  // namespace

ScenarioReport run_scenario(const ScenarioConfig& config, const HarnessOptions& options) {
    config.validate();
    ScenarioReport report;
    report.config = config;

    const auto runs = static_cast<std::size_t>(config.runs);
    std::vector<RunData> data(runs);
    parallel_for(runs, options.jobs, [&](std::size_t m) { data[m] = prepare_run(config, static_cast<int>(m)); });

    const std::size_t method_count = config.methods.size();
    std::vector<MethodRun> results(runs * method_count);
    parallel_for(results.size(), options.jobs, [&](std::size_t task) {
        const std::size_t m = task / method_count;
        const std::size_t k = task % method_count;
        results[task] = run_method(config, data[m], config.methods[k], options.trace_dir);
    });

    // Deterministic fold in run order.
    std::vector<MIEstimate> bench_totals;
    std::map<std::string, std::vector<MIEstimate>> bench_params;
    for (const auto& d : data) {
        report.seeds.push_back(d.seeds);
        report.population_totals.push_back(d.population_total);
        report.missing_rates.push_back(d.missing_rate);
        report.no_missing_runs.push_back(d.benchmark);
        MIEstimate t;
        t.point = d.benchmark.total.total;
        t.variance = d.benchmark.total.variance();
        t.within = t.variance;
        t.L = 1;
        bench_totals.push_back(t);
        for (const auto& [name, pv] : d.benchmark.parameters) {
            MIEstimate e;
            e.point = pv.first;
            e.variance = pv.second;
            e.within = pv.second;
            e.L = 1;
            bench_params[name].push_back(e);
        }
    }
    for (double p : report.population_totals) report.population_total += p / static_cast<double>(runs);
    report.no_missing_total = aggregate_runs(bench_totals);
    for (const auto& [name, v] : bench_params) report.no_missing_parameters[name] = aggregate_runs(v);

    for (std::size_t k = 0; k < method_count; ++k) {
        MethodSummary summary;
        summary.method = config.methods[k];
        std::vector<MIEstimate> totals;
        std::map<std::string, std::vector<MIEstimate>> params;
        std::vector<double> acceptance;
        std::map<int, std::vector<double>> stratum_acceptance;
        for (std::size_t m = 0; m < runs; ++m) {
            const auto& r = results[m * method_count + k];
            summary.runs.push_back(r);
            totals.push_back(r.total);
            for (const auto& [name, e] : r.parameters) params[name].push_back(e);
            acceptance.push_back(r.acceptance);
            for (const auto& [s, a] : r.stratum_acceptance) stratum_acceptance[s].push_back(a);
            report.warnings.insert(report.warnings.end(), r.warnings.begin(), r.warnings.end());
        }
        summary.total = aggregate_runs(totals);
        for (const auto& [name, v] : params) summary.parameters[name] = aggregate_runs(v);
        if (traits(summary.method).uses_margin) {
            summary.acceptance = summarize(acceptance);
            for (const auto& [s, v] : stratum_acceptance) summary.stratum_acceptance[s] = summarize(v);
        }
        report.methods.push_back(std::move(summary));
    }
    return report;
}

ReportTable totals_table(const ScenarioReport& report) {
    ReportTable t;
    std::vector<int> strata;
    if (report.config.margin_scope == MarginScope::PerStratum) {
        for (const auto& [s, n] : report.config.stratum_sizes) strata.push_back(s);
    }
    t.header = {"method", "mean", "se", "acceptance_mean", "acceptance_min", "acceptance_max"};
    for (int s : strata) {
        for (const char* what : {"acceptance_mean_s", "acceptance_min_s", "acceptance_max_s"}) {
            t.header.push_back(what + std::to_string(s));
        }
    }
    const std::size_t width = t.header.size() - 1;
    auto add = [&](std::string label, std::vector<std::optional<double>> values) {
        values.resize(width);
        t.labels.push_back(std::move(label));
        t.cells.push_back(std::move(values));
    };
    add("Population", {report.population_total});
    add("No Missing Data", {report.no_missing_total.mean, report.no_missing_total.pooled_se});
    for (const auto& m : report.methods) {
        std::vector<std::optional<double>> row{m.total.mean, m.total.pooled_se};
        if (m.acceptance) {
            row.insert(row.end(), {m.acceptance->mean, m.acceptance->min, m.acceptance->max});
        } else {
            row.insert(row.end(), {std::nullopt, std::nullopt, std::nullopt});
        }
        for (int s : strata) {
            auto it = m.stratum_acceptance.find(s);
            if (it == m.stratum_acceptance.end()) {
                row.insert(row.end(), {std::nullopt, std::nullopt, std::nullopt});
            } else {
                row.insert(row.end(), {it->second.mean, it->second.min, it->second.max});
            }
        }
        add(std::string(method_name(m.method)), std::move(row));
    }
    return t;
}

ReportTable parameters_table(const ScenarioReport& report) {
    ReportTable t;
    t.header = {"parameter", "truth", "No Missing Data_mean", "No Missing Data_se"};
    for (const auto& m : report.methods) {
        t.header.push_back(std::string(method_name(m.method)) + "_mean");
        t.header.push_back(std::string(method_name(m.method)) + "_se");
    }
    const auto& c = report.config;
    const std::map<std::string, double> truth{{"alpha0", c.alpha[0]},  {"alpha12", c.alpha[1]},
                                              {"alpha13", c.alpha[2]}, {"gamma0", c.gamma[0]},
                                              {"gamma12", c.gamma[1]}, {"gamma13", c.gamma[2]},
                                              {"gamma2", c.gamma[3]}};
    auto cell = [](const std::map<std::string, RunAggregate>& m, const std::string& name, bool se) {
        auto it = m.find(name);
        if (it == m.end()) return std::optional<double>{};
        return std::optional<double>{se ? it->second.pooled_se : it->second.mean};
    };
    for (const auto& name : parameter_names()) {
        std::vector<std::optional<double>> row{truth.at(name), cell(report.no_missing_parameters, name, false),
                                               cell(report.no_missing_parameters, name, true)};
        for (const auto& m : report.methods) {
            row.push_back(cell(m.parameters, name, false));
            row.push_back(cell(m.parameters, name, true));
        }
        t.labels.push_back(name);
        t.cells.push_back(std::move(row));
    }
    return t;
}

void write_table_csv(const std::filesystem::path& path, const ReportTable& table) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    csv::write_row(out, table.header);
    for (std::size_t r = 0; r < table.labels.size(); ++r) {
        csv::Row row{table.labels[r]};
        for (const auto& v : table.cells[r]) row.push_back(v ? csv::format_double(*v) : std::string{});
        csv::write_row(out, row);
    }
    if (!out) throw IoError("write failed for " + path.string());
}

ReportTable read_table_csv(const std::filesystem::path& path) {
    const auto rows = csv::parse(csv::read_file(path.string()));
    if (rows.empty()) throw SchemaError(path.string() + " is empty");
    ReportTable t;
    t.header = rows[0];
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& row = rows[r];
        if (row.size() != t.header.size()) {
            throw SchemaError(path.string() + ": line " + std::to_string(r + 1) + " has the wrong number of fields");
        }
        t.labels.push_back(row[0]);
        std::vector<std::optional<double>> cells;
        for (std::size_t k = 1; k < row.size(); ++k) {
            if (row[k].empty()) {
                cells.emplace_back();
            } else {
                try {
                    std::size_t used = 0;
                    const double v = std::stod(row[k], &used);
                    if (used != row[k].size()) throw std::invalid_argument(row[k]);
                    cells.emplace_back(v);
                } catch (const std::exception&) {
                    throw SchemaError(path.string() + ": line " + std::to_string(r + 1) + " has a non-numeric cell");
                }
            }
        }
        t.cells.push_back(std::move(cells));
    }
    return t;
}

namespace {

json aggregate_json(const RunAggregate& a) { return json{{"mean", a.mean}, {"pooled_se", a.pooled_se}}; }

json mi_json(const MIEstimate& e) {
    return json{{"point", e.point}, {"variance", e.variance}, {"within", e.within}, {"between", e.between}, {"L", e.L}};
}

json acceptance_json(const AcceptanceSummary& a) { return json{{"mean", a.mean}, {"min", a.min}, {"max", a.max}}; }

json seeds_json(const RunSeeds& s) {
    json chains = json::object();
    for (const auto& [m, seed] : s.chains) chains[std::string(method_name(m))] = seed;
    return json{{"run", s.run + 1},         {"run_seed", s.run_seed},       {"population_seed", s.population},
                {"sample_seed", s.sample}, {"missingness_seed", s.missingness}, {"chain_seeds", chains}};
}

}  // namespace

std::string report_to_json(const ScenarioReport& report) {
    json methods = json::array();
    for (const auto& m : report.methods) {
        json params = json::object();
        for (const auto& [name, a] : m.parameters) params[name] = aggregate_json(a);
        json runs = json::array();
        for (const auto& r : m.runs) {
            json rp = json::object();
            for (const auto& [name, e] : r.parameters) rp[name] = mi_json(e);
            json sa = json::object();
            for (const auto& [s, a] : r.stratum_acceptance) sa[std::to_string(s)] = a;
            runs.push_back(json{{"total", mi_json(r.total)},
                                {"parameters", rp},
                                {"acceptance", r.acceptance},
                                {"stratum_acceptance", sa},
                                {"completed_datasets", r.completed_datasets}});
        }
        json entry{{"method", std::string(method_name(m.method))},
                   {"total", aggregate_json(m.total)},
                   {"parameters", params},
                   {"runs", runs}};
        if (m.acceptance) entry["acceptance"] = acceptance_json(*m.acceptance);
        if (!m.stratum_acceptance.empty()) {
            json sa = json::object();
            for (const auto& [s, a] : m.stratum_acceptance) sa[std::to_string(s)] = acceptance_json(a);
            entry["stratum_acceptance"] = sa;
        }
        methods.push_back(entry);
    }
    json bench_params = json::object();
    for (const auto& [name, a] : report.no_missing_parameters) bench_params[name] = aggregate_json(a);
    json j{{"id", report.config.id},
           {"population_total", report.population_total},
           {"population_totals", report.population_totals},
           {"missing_rates", report.missing_rates},
           {"no_missing_data", {{"total", aggregate_json(report.no_missing_total)}, {"parameters", bench_params}}},
           {"methods", methods},
           {"warnings", report.warnings}};
    return j.dump(2);
}

std::string manifest_json(const ScenarioReport& report) {
    json seeds = json::array();
    for (const auto& s : report.seeds) seeds.push_back(seeds_json(s));
    json j{{"id", report.config.id},
           {"master_seed", report.config.master_seed},
           {"runs", seeds},
           {"config", json::parse(scenario_to_json(report.config))},
           {"warnings", report.warnings}};
    return j.dump(2);
}

std::vector<std::filesystem::path> emit_report(const ScenarioReport& report, const std::filesystem::path& dir,
                                               ReportFormat format) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

    std::vector<std::filesystem::path> written;
    const std::string stem = report.config.id;
    auto write_text = [&](const std::filesystem::path& path, const std::string& text) {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw IoError("cannot write " + path.string());
        out << text << '\n';
        if (!out) throw IoError("write failed for " + path.string());
        written.push_back(path);
    };

    if (format == ReportFormat::Csv) {
        const auto totals = dir / (stem + "_totals.csv");
        write_table_csv(totals, totals_table(report));
        written.push_back(totals);
        const auto params = dir / (stem + "_parameters.csv");
        write_table_csv(params, parameters_table(report));
        written.push_back(params);
    } else {
        write_text(dir / (stem + "_report.json"), report_to_json(report));
    }
    write_text(dir / (stem + "_manifest.json"), manifest_json(report));
    return written;
}

}  // namespace anmi
