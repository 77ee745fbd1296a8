#include "anmi_cli/cli.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "anmi/csv.hpp"
#include "anmi/error.hpp"
#include "anmi/estimators.hpp"
#include "anmi/harness.hpp"
#include "anmi/mcmc.hpp"

#ifndef ANMI_VERSION
#define ANMI_VERSION "0.0.0"
#endif

namespace anmi::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string join_args(const std::vector<std::string>& args) {
    std::string out;
    for (const auto& a : args) {
        if (!out.empty()) out += ' ';
        out += a;
    }
    return out;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text << '\n';
    if (!out) throw IoError("write failed for " + path.string());
}

// Output directory built under a hidden sibling and renamed into place on
// commit; dropped on destruction otherwise.
class StagedDir {
public:
    explicit StagedDir(fs::path target) : target_(fs::absolute(std::move(target))) {
        if (fs::exists(target_)) {
            if (!fs::is_directory(target_)) throw UsageError(target_.string() + " exists and is not a directory");
            if (!fs::is_empty(target_) && !looks_like_ours(target_)) {
                throw UsageError(target_.string() + " is not empty and holds no earlier run manifest; refusing to replace it");
            }
        }
        fs::create_directories(target_.parent_path());
        std::random_device rd;
        std::ostringstream name;
        name << '.' << target_.filename().string() << ".tmp-" << std::hex << rd();
        staging_ = target_.parent_path() / name.str();
        fs::create_directories(staging_);
    }
    StagedDir(const StagedDir&) = delete;
    StagedDir& operator=(const StagedDir&) = delete;

    ~StagedDir() {
        if (!committed_) {
            std::error_code ec;
            fs::remove_all(staging_, ec);
        }
    }

    [[nodiscard]] const fs::path& path() const { return staging_; }
    [[nodiscard]] const fs::path& target() const { return target_; }

    void commit() {
        std::error_code ec;
        if (fs::exists(target_)) fs::remove_all(target_);
        fs::rename(staging_, target_, ec);
        if (ec) throw IoError("cannot move output into " + target_.string() + ": " + ec.message());
        committed_ = true;
    }

private:
    static bool looks_like_ours(const fs::path& dir) {
        return fs::exists(dir / "run_manifest.json");
    }

    fs::path target_;
    fs::path staging_;
    bool committed_ = false;
};

fs::path default_output(const std::string& leaf) {
    const char* root = std::getenv(kOutputRootEnv);
    fs::path base = (root != nullptr && *root != '\0') ? fs::path(root) : fs::path("anmi-output");
    return base / leaf;
}

struct ChainFlags {
    std::optional<std::uint64_t> seed;
    std::optional<std::int64_t> iterations;
    std::optional<std::int64_t> burn_in;
    std::optional<std::int64_t> thin;
    bool refresh_margin_variance = false;
    bool with_replacement = false;
    std::string out;
};

void add_chain_flags(CLI::App* cmd, ChainFlags& f) {
    cmd->add_option("--seed", f.seed, "Master seed (simulate) or chain seed (impute)");
    cmd->add_option("--iterations", f.iterations, "MCMC iterations per chain")->check(CLI::PositiveNumber);
    cmd->add_option("--burn-in", f.burn_in, "Burn-in iterations")->check(CLI::NonNegativeNumber);
    cmd->add_option("--thin", f.thin, "Keep every thin-th post-burn-in draw")->check(CLI::PositiveNumber);
    cmd->add_flag("--refresh-margin-variance", f.refresh_margin_variance,
                  "Re-estimate the margin variance from burn-in completed datasets");
    cmd->add_flag("--with-replacement-variance", f.with_replacement,
                  "Design SEs without the finite population correction");
    cmd->add_option("--out", f.out, std::string("Output directory (default under $") + kOutputRootEnv + ")");
}

void apply_chain_flags(const ChainFlags& f, ChainSettings& chain) {
    if (f.iterations) chain.iterations = *f.iterations;
    if (f.burn_in) chain.burn_in = *f.burn_in;
    if (f.thin) chain.thin = *f.thin;
    if (f.refresh_margin_variance) chain.refresh_margin_variance = true;
}

json phase_json(const std::vector<std::pair<std::string, double>>& phases) {
    json j = json::object();
    for (const auto& [name, secs] : phases) j[name] = secs;
    return j;
}

std::string format_cell(const std::optional<double>& v, int precision) {
    if (!v) return "";
    std::ostringstream s;
    s << std::fixed << std::setprecision(precision) << *v;
    return s.str();
}

void print_table(std::ostream& out, const ReportTable& t, int precision) {
    std::vector<std::vector<std::string>> rows{t.header};
    for (std::size_t r = 0; r < t.labels.size(); ++r) {
        std::vector<std::string> row{t.labels[r]};
        for (const auto& c : t.cells[r]) row.push_back(format_cell(c, precision));
        rows.push_back(std::move(row));
    }
    std::vector<std::size_t> width(t.header.size(), 0);
    for (const auto& row : rows) {
        for (std::size_t k = 0; k < row.size(); ++k) width[k] = std::max(width[k], row[k].size());
    }
    for (const auto& row : rows) {
        for (std::size_t k = 0; k < row.size(); ++k) {
            if (k == 0) {
                out << std::left << std::setw(static_cast<int>(width[k])) << row[k];
            } else {
                out << "  " << std::right << std::setw(static_cast<int>(width[k])) << row[k];
            }
        }
        out << '\n';
    }
}

ScenarioConfig resolve_scenario(const std::string& what) {
    const auto builtins = builtin_scenarios();
    if (auto it = builtins.find(what); it != builtins.end()) return it->second;
    const fs::path path(what);
    if (path.extension() == ".json" && fs::is_regular_file(path)) {
        return scenario_from_json(csv::read_file(path.string()));
    }
    throw UsageError("unknown scenario '" + what + "' (see `list --scenarios`)");
}

struct SimulateArgs {
    std::string scenario;
    ChainFlags chain;
    std::optional<int> runs;
    unsigned jobs = 0;
    std::string format = "csv";
    std::string margin_variance;
    std::vector<std::string> methods;
    bool trace = false;
};

int cmd_simulate(const SimulateArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
    auto phase_start = Clock::now();
    std::vector<std::pair<std::string, double>> phases;

    ScenarioConfig config = resolve_scenario(a.scenario);
    if (a.chain.seed) config.master_seed = *a.chain.seed;
    if (a.runs) config.runs = *a.runs;
    apply_chain_flags(a.chain, config.chain);
    if (a.chain.with_replacement) config.variance_convention = VarianceConvention::WithReplacement;
    if (!a.margin_variance.empty()) {
        config.margin_variance =
            a.margin_variance == "sample" ? MarginVarianceSource::Sample : MarginVarianceSource::Population;
    }
    if (!a.methods.empty()) {
        config.methods.clear();
        for (const auto& m : a.methods) {
            auto parsed = parse_method(m);
            if (!parsed) throw UsageError("unknown method '" + m + "' (see `list --methods`)");
            config.methods.push_back(*parsed);
        }
    }
    try {
        config.validate();
    } catch (const ParameterDomainError& e) {
        throw UsageError(e.what());
    }
    const std::string config_text = scenario_to_json(config);

    StagedDir dir(a.chain.out.empty() ? default_output(config.id) : fs::path(a.chain.out));
    HarnessOptions options;
    options.jobs = a.jobs;
    if (a.trace) {
        options.trace_dir = dir.path() / "traces";
        fs::create_directories(options.trace_dir);
    }
    phases.emplace_back("setup", seconds_since(phase_start));

    phase_start = Clock::now();
    const ScenarioReport report = run_scenario(config, options);
    phases.emplace_back("simulate", seconds_since(phase_start));

    phase_start = Clock::now();
    emit_report(report, dir.path(), a.format == "json" ? ReportFormat::Json : ReportFormat::Csv);
    write_text(dir.path() / (config.id + "_config.json"), config_text);
    phases.emplace_back("report", seconds_since(phase_start));

    json seeds = json::array();
    for (const auto& s : report.seeds) {
        json chains = json::object();
        for (const auto& [m, seed] : s.chains) chains[std::string(method_name(m))] = seed;
        seeds.push_back({{"run", s.run + 1},
                         {"run_seed", s.run_seed},
                         {"population", s.population},
                         {"sample", s.sample},
                         {"missingness", s.missingness},
                         {"chains", chains}});
    }
    json manifest{{"command", "simulate"},
                  {"command_line", join_args(argv)},
                  {"version", ANMI_VERSION},
                  {"config_digest", "sha256:" + sha256_hex(config_text)},
                  {"master_seed", config.master_seed},
                  {"seeds", seeds},
                  {"timings_seconds", phase_json(phases)},
                  {"warnings", report.warnings}};
    write_text(dir.path() / "run_manifest.json", manifest.dump(2));
    dir.commit();

    out << config.id << ": " << config.description << '\n';
    print_table(out, totals_table(report), 2);
    out << '\n';
    print_table(out, parameters_table(report), 3);
    for (const auto& w : report.warnings) out << "warning: " << w << '\n';
    out << "wrote " << dir.target().string() << '\n';
    return kExitOk;
}

struct ImputeArgs {
    std::string data;
    std::string margin;
    std::string method;
    ChainFlags chain;
};

int cmd_impute(const ImputeArgs& a, const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
    auto phase_start = Clock::now();
    std::vector<std::pair<std::string, double>> phases;

    const auto method = parse_method(a.method);
    if (!method) throw UsageError("unknown method '" + a.method + "' (see `list --methods`)");
    const auto tr = traits(*method);
    if (tr.uses_margin && a.margin.empty()) {
        throw UsageError(std::string(method_name(*method)) + " needs a margin declaration (--margin)");
    }

    const std::string data_bytes = csv::read_file(a.data);
    const SurveySample sample = parse_sample_csv(data_bytes);
    std::optional<AuxiliaryMargin> margin;
    std::string margin_bytes;
    if (!a.margin.empty()) {
        margin_bytes = csv::read_file(a.margin);
        margin = margin_from_json(margin_bytes);
        margin->validate_against(sample.stratum_sizes);
        if (margin->scope() == MarginScope::PerStratum) {
            for (const auto& [s, n] : sample.stratum_sizes) {
                if (!margin->strata().contains(s)) {
                    throw SchemaError("margin declares no entry for stratum " + std::to_string(s));
                }
            }
        }
        if (!tr.uses_margin) {
            err << "note: " << method_name(*method) << " does not use the margin; ignoring " << a.margin << '\n';
            margin.reset();
        }
    }

    ChainSettings settings;
    settings.method = *method;
    settings.seed = a.chain.seed.value_or(1);
    apply_chain_flags(a.chain, settings);
    try {
        settings.validate();
    } catch (const ParameterDomainError& e) {
        throw UsageError(e.what());
    }
    const auto convention =
        a.chain.with_replacement ? VarianceConvention::WithReplacement : VarianceConvention::WithoutReplacement;

    json config{{"method", std::string(method_name(*method))},
                {"seed", settings.seed},
                {"iterations", settings.iterations},
                {"burn_in", settings.burn_in},
                {"thin", settings.thin},
                {"refresh_margin_variance", settings.refresh_margin_variance},
                {"variance_convention", a.chain.with_replacement ? "with-replacement" : "without-replacement"},
                {"data_sha256", sha256_hex(data_bytes)},
                {"margin_sha256", margin ? json(sha256_hex(margin_bytes)) : json(nullptr)}};
    const std::string config_text = config.dump();

    StagedDir dir(a.chain.out.empty() ? default_output("impute") : fs::path(a.chain.out));
    phases.emplace_back("load", seconds_since(phase_start));

    phase_start = Clock::now();
    ChainResult result;
    try {
        result = run_chain(sample, margin, settings);
    } catch (const Error& e) {
        throw ChainError(std::string(method_name(*method)) + " chain (seed " + std::to_string(settings.seed) +
                         "): " + e.what());
    }
    phases.emplace_back("chain", seconds_since(phase_start));

    phase_start = Clock::now();
    std::vector<CompletedEstimates> estimates;
    for (std::size_t l = 0; l < result.completed.size(); ++l) {
        std::ostringstream name;
        name << "completed_" << std::setw(3) << std::setfill('0') << (l + 1) << ".csv";
        write_sample_csv((dir.path() / name.str()).string(), result.completed[l]);
        estimates.push_back(estimate_completed(result.completed[l], tr.response_has_x, true, convention));
    }
    const auto [total, params] = combine_estimates(estimates);
    phases.emplace_back("analysis", seconds_since(phase_start));

    auto mi = [](const MIEstimate& e) {
        return json{{"point", e.point},   {"se", e.se()},           {"variance", e.variance},
                    {"within", e.within}, {"between", e.between}, {"L", e.L}};
    };
    json estimates_json{{"method", std::string(method_name(*method))}, {"total", mi(total)}};
    json pj = json::object();
    for (const auto& name : parameter_names()) {
        if (auto it = params.find(name); it != params.end()) pj[name] = mi(it->second);
    }
    estimates_json["parameters"] = pj;
    write_text(dir.path() / "mi_estimates.json", estimates_json.dump(2));

    json strata = json::object();
    for (const auto& [s, r] : result.trace.stratum_ratios) strata[std::to_string(s)] = r;
    json diagnostics{{"overall_ratio", result.trace.overall_ratio},
                     {"stratum_ratios", strata},
                     {"burn_in", result.trace.burn_in},
                     {"warnings", result.trace.warnings}};
    if (result.margin_used) diagnostics["margin_used"] = json::parse(margin_to_json(*result.margin_used));
    write_text(dir.path() / "acceptance.json", diagnostics.dump(2));
    {
        std::ofstream trace(dir.path() / "trace.csv", std::ios::binary);
        write_trace_csv(trace, result);
    }

    json manifest{{"command", "impute"},
                  {"command_line", join_args(argv)},
                  {"version", ANMI_VERSION},
                  {"config_digest", "sha256:" + sha256_hex(config_text)},
                  {"config", config},
                  {"seeds", {{"chain", settings.seed}}},
                  {"timings_seconds", phase_json(phases)},
                  {"warnings", result.trace.warnings}};
    write_text(dir.path() / "run_manifest.json", manifest.dump(2));
    dir.commit();

    out << method_name(*method) << ": " << result.completed.size() << " completed datasets, T_X = "
        << format_cell(total.point, 2) << " (SE " << format_cell(total.se(), 2) << ")";
    if (tr.uses_margin) out << ", acceptance " << format_cell(result.trace.overall_ratio, 3);
    out << '\n';
    for (const auto& w : result.trace.warnings) out << "warning: " << w << '\n';
    out << "wrote " << dir.target().string() << '\n';
    return kExitOk;
}

int cmd_list(bool scenarios, bool methods, std::ostream& out) {
    if (scenarios) {
        for (const auto& [id, c] : builtin_scenarios()) out << std::left << std::setw(18) << id << c.description << '\n';
    }
    if (methods) {
        for (Method m : kAllMethods) {
            out << std::left << std::setw(22) << method_name(m) << method_description(m) << '\n';
        }
    }
    return kExitOk;
}

}  // namespace

std::string sha256_hex(const std::string& bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw Error("SHA-256 digest failed");
    }
    std::ostringstream s;
    for (unsigned int i = 0; i < len; ++i) s << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
    return s.str();
}

AuxiliaryMargin margin_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw SchemaError(std::string("margin file is not valid JSON: ") + e.what());
    }
    try {
        const auto scope = j.at("scope").get<std::string>();
        const auto& totals = j.at("totals");
        const auto& variances = j.at("variances");
        if (scope == "overall") {
            return AuxiliaryMargin::overall(totals.at("overall").get<double>(), variances.at("overall").get<double>());
        }
        if (scope != "per-stratum") throw SchemaError("margin scope must be 'overall' or 'per-stratum'");
        std::map<int, MarginEntry> entries;
        for (const auto& [key, value] : totals.items()) {
            int s = 0;
            try {
                s = std::stoi(key);
            } catch (const std::exception&) {
                throw SchemaError("margin stratum key '" + key + "' is not an integer");
            }
            if (!variances.contains(key)) throw SchemaError("margin has no variance for stratum " + key);
            entries[s] = MarginEntry{value.get<double>(), variances.at(key).get<double>()};
        }
        if (variances.size() != totals.size()) throw SchemaError("margin totals and variances name different strata");
        return AuxiliaryMargin::per_stratum(std::move(entries));
    } catch (const json::exception& e) {
        throw SchemaError(std::string("margin file: ") + e.what());
    } catch (const ParameterDomainError& e) {
        throw SchemaError(std::string("margin file: ") + e.what());
    }
}

std::string margin_to_json(const AuxiliaryMargin& margin) {
    json totals = json::object();
    json variances = json::object();
    if (margin.scope() == MarginScope::Overall) {
        totals["overall"] = margin.overall_entry().total;
        variances["overall"] = margin.overall_entry().variance;
    } else {
        for (const auto& [s, e] : margin.strata()) {
            totals[std::to_string(s)] = e.total;
            variances[std::to_string(s)] = e.variance;
        }
    }
    json j{{"scope", margin.scope() == MarginScope::Overall ? "overall" : "per-stratum"},
           {"totals", totals},
           {"variances", variances}};
    return j.dump(2);
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Multiple imputation under additive nonignorable models with auxiliary margins", "anmi"};
    app.set_version_flag("--version", ANMI_VERSION);
    app.require_subcommand(1);

    SimulateArgs sim;
    auto* simulate = app.add_subcommand("simulate", "Run a built-in scenario or a scenario config file");
    simulate->add_option("scenario", sim.scenario, "Scenario id or path to a .json config")->required();
    add_chain_flags(simulate, sim.chain);
    simulate->add_option("--runs", sim.runs, "Number of replicate runs")->check(CLI::PositiveNumber);
    simulate->add_option("--jobs", sim.jobs, "Worker threads (default: logical cores)");
    simulate->add_option("--format", sim.format, "Report format")->check(CLI::IsMember({"csv", "json"}));
    simulate->add_option("--margin-variance", sim.margin_variance, "Source of V_X")
        ->check(CLI::IsMember({"population", "sample"}));
    simulate->add_option("--methods", sim.methods, "Subset of methods to run");
    simulate->add_flag("--trace", sim.trace, "Write per-chain trace CSVs");

    ImputeArgs imp;
    auto* impute = app.add_subcommand("impute", "Multiply impute a survey CSV");
    impute->add_option("--data", imp.data, "Survey CSV (stratum,weight,y,x,r)")->required();
    impute->add_option("--margin", imp.margin, "Margin declaration JSON");
    impute->add_option("--method", imp.method, "Imputation method")->required();
    add_chain_flags(impute, imp.chain);
    std::string impute_format = "json";
    impute->add_option("--format", impute_format, "Estimates format")->check(CLI::IsMember({"json"}));
    unsigned impute_jobs = 1;
    impute->add_option("--jobs", impute_jobs, "Accepted for symmetry; one chain runs sequentially");

    bool list_scenarios = false;
    bool list_methods = false;
    auto* list = app.add_subcommand("list", "List built-in scenarios or methods");
    list->add_flag("--scenarios", list_scenarios, "List scenario ids");
    list->add_flag("--methods", list_methods, "List imputation methods");

    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::CallForVersion&) {
        out << ANMI_VERSION << '\n';
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << '\n';
        const auto* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
        err << sub->help();
        return kExitUsage;
    }

    try {
        if (simulate->parsed()) return cmd_simulate(sim, args, out);
        if (impute->parsed()) return cmd_impute(imp, args, out, err);
        if (!list_scenarios && !list_methods) {
            err << "error: list needs --scenarios or --methods\n" << list->help();
            return kExitUsage;
        }
        return cmd_list(list_scenarios, list_methods, out);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const SchemaError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const ChainError& e) {
        err << "error: chain failed: " << e.what() << '\n';
        return kExitFailure;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitFailure;
    }
}

}  // namespace anmi::cli
