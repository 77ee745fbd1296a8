#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "anmi/csv.hpp"
#include "anmi/survey.hpp"
#include "anmi_cli/cli.hpp"

using namespace anmi;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
    int code;
    std::string out;
    std::string err;
};

Outcome invoke(std::vector<std::string> args) {
    std::ostringstream out;
    std::ostringstream err;
    args.insert(args.begin(), "anmi");
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("anmi-cli-" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

void spit(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

// Every file of a directory except the timing-bearing manifest, by name.
std::map<std::string, std::string> contents(const fs::path& dir) {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (!e.is_regular_file() || e.path().filename() == "run_manifest.json") continue;
        files[fs::relative(e.path(), dir).string()] = slurp(e.path());
    }
    return files;
}

struct Fixture {
    fs::path dir;
    fs::path data;
    fs::path margin;
    StratifiedPopulation pop;
};

Fixture scenario_data(const std::string& name, ResponseTruth gamma, std::int64_t scale = 5) {
    Fixture f;
    f.dir = scratch(name);
    f.pop = generate_population({{{1, {0.5, 0.15, 0.35}}, {2, {0.1, 0.45, 0.45}}},
                                 {0.5, -0.5, -1.0},
                                 {{1, 35000 / scale}, {2, 15000 / scale}}},
                                31);
    const StratumCounts draws{{1, 1500 / scale}, {2, 3500 / scale}};
    const auto masked = impose_missingness(draw_stratified_sample(f.pop, draws, 32), gamma, 33);
    f.data = f.dir / "sample.csv";
    write_sample_csv(f.data.string(), masked.sample);
    f.margin = f.dir / "margin.json";
    spit(f.margin, cli::margin_to_json(theoretical_margin(f.pop, draws, MarginScope::Overall)));
    return f;
}

}  // namespace

TEST_CASE("list prints scenarios and methods") {
    auto r = invoke({"list", "--scenarios"});
    CHECK(r.code == cli::kExitOk);
    CHECK(r.out.find("scenario1") != std::string::npos);
    CHECK(r.out.find("scenario4-desk") != std::string::npos);
    r = invoke({"list", "--methods"});
    CHECK(r.code == cli::kExitOk);
    for (const char* m : {"MAR+Weight", "AN+Weight", "AN+Constraint", "AN+Constraint+Weight"}) {
        CHECK(r.out.find(m) != std::string::npos);
    }
    CHECK(invoke({"list"}).code == cli::kExitUsage);
    CHECK(invoke({}).code == cli::kExitUsage);
    CHECK(invoke({"frobnicate"}).code == cli::kExitUsage);
}

TEST_CASE("unknown scenarios and methods are usage errors") {
    const auto dir = scratch("unknown");
    auto r = invoke({"simulate", "nosuch", "--out", (dir / "o").string()});
    CHECK(r.code == cli::kExitUsage);
    CHECK(r.err.find("nosuch") != std::string::npos);
    CHECK_FALSE(fs::exists(dir / "o"));
    r = invoke({"simulate", "scenario1", "--methods", "bogus", "--out", (dir / "o").string()});
    CHECK(r.code == cli::kExitUsage);
    CHECK(invoke({"simulate", "scenario1", "--iterations", "-3"}).code == cli::kExitUsage);
    fs::remove_all(dir);
}

TEST_CASE("simulate is reproducible and writes a manifest") {
    const auto dir = scratch("simulate");
    spit(dir / "tiny.json", R"({"base": "scenario3", "id": "tiny", "runs": 2,
        "stratum_sizes": {"1": 1400, "2": 600}, "stratum_draws": {"1": 60, "2": 140},
        "chain": {"iterations": 300, "burn_in": 100, "thin": 20}})");
    const std::vector<std::string> common{"simulate", (dir / "tiny.json").string(), "--seed", "7", "--jobs", "1",
                                          "--trace"};
    auto args = common;
    args.insert(args.end(), {"--out", (dir / "a").string()});
    const auto a = invoke(args);
    REQUIRE_MESSAGE(a.code == cli::kExitOk, a.err);
    args = common;
    args.insert(args.end(), {"--out", (dir / "b").string()});
    const auto b = invoke(args);
    REQUIRE(b.code == cli::kExitOk);

    const auto fa = contents(dir / "a");
    CHECK(fa == contents(dir / "b"));
    CHECK(fa.count("tiny_totals.csv") == 1);
    CHECK(fa.count("tiny_parameters.csv") == 1);
    CHECK(fa.count("tiny_manifest.json") == 1);
    CHECK(fa.count("tiny_config.json") == 1);
    CHECK(fa.count("traces/tiny_run1_AN+Constraint_trace.csv") == 1);
    CHECK(a.out.find("AN+Constraint+Weight") != std::string::npos);

    const auto manifest = json::parse(slurp(dir / "a" / "run_manifest.json"));
    CHECK(manifest["command"] == "simulate");
    CHECK(manifest["master_seed"] == 7);
    CHECK(manifest["config_digest"].get<std::string>().rfind("sha256:", 0) == 0);
    CHECK(manifest["config_digest"] == json::parse(slurp(dir / "b" / "run_manifest.json"))["config_digest"]);
    CHECK(manifest["seeds"].size() == 2);
    CHECK(manifest["timings_seconds"].contains("simulate"));

    // An existing run directory may be replaced; another non-empty directory may not.
    CHECK(invoke(args).code == cli::kExitOk);
    fs::create_directories(dir / "c");
    spit(dir / "c" / "keep.txt", "x");
    args = common;
    args.insert(args.end(), {"--out", (dir / "c").string()});
    CHECK(invoke(args).code != cli::kExitOk);
    CHECK(fs::exists(dir / "c" / "keep.txt"));
    fs::remove_all(dir);
}

TEST_CASE("simulate honours the output root and json format") {
    const auto dir = scratch("root");
    ::setenv(cli::kOutputRootEnv, dir.c_str(), 1);
    const auto r = invoke({"simulate", "scenario1-desk", "--runs", "1", "--methods", "AN+Constraint",
                           "--iterations", "400", "--burn-in", "200", "--thin", "20", "--format", "json"});
    ::unsetenv(cli::kOutputRootEnv);
    REQUIRE_MESSAGE(r.code == cli::kExitOk, r.err);
    const auto report = json::parse(slurp(dir / "scenario1-desk" / "scenario1-desk_report.json"));
    CHECK(report["methods"].size() == 1);
    CHECK(report["population_totals"].size() == 1);
    fs::remove_all(dir);
}

TEST_CASE("impute without missing values reproduces the data") {
    const auto f = scenario_data("complete", {-8.0, 0.0, 0.0, 0.0}, 25);
    const auto out = f.dir / "out";
    const auto r = invoke({"impute", "--data", f.data.string(), "--method", "AN+Weight", "--iterations", "200",
                           "--burn-in", "100", "--thin", "50", "--out", out.string()});
    REQUIRE_MESSAGE(r.code == cli::kExitOk, r.err);
    const auto input = slurp(f.data);
    CHECK(slurp(out / "completed_001.csv") == input);
    CHECK(slurp(out / "completed_002.csv") == input);
    const auto est = json::parse(slurp(out / "mi_estimates.json"));
    CHECK(est["total"]["between"] == 0.0);
    CHECK(est["total"]["L"] == 2);
    CHECK(fs::exists(out / "acceptance.json"));
    CHECK(fs::exists(out / "trace.csv"));
    fs::remove_all(f.dir);
}

TEST_CASE("impute input validation") {
    const auto f = scenario_data("invalid", {-0.25, 0.1, 0.3, -1.1}, 25);
    auto r = invoke({"impute", "--data", f.data.string(), "--method", "AN+Constraint", "--out",
                     (f.dir / "o").string()});
    CHECK(r.code == cli::kExitUsage);
    CHECK(r.err.find("margin") != std::string::npos);

    auto rows = csv::parse(slurp(f.data));
    rows[2][1] = "heavy";
    rows[4][1] = "-1";
    std::ostringstream bad;
    for (const auto& row : rows) csv::write_row(bad, row);
    spit(f.dir / "bad.csv", bad.str());
    r = invoke({"impute", "--data", (f.dir / "bad.csv").string(), "--method", "MAR+Weight", "--out",
                (f.dir / "o").string()});
    CHECK(r.code == cli::kExitUsage);
    CHECK(r.err.find("line 3") != std::string::npos);
    CHECK(r.err.find("line 5") != std::string::npos);
    CHECK_FALSE(fs::exists(f.dir / "o"));

    spit(f.dir / "broken.json", "{\"scope\": \"overall\"");
    r = invoke({"impute", "--data", f.data.string(), "--method", "AN+Constraint", "--margin",
                (f.dir / "broken.json").string(), "--out", (f.dir / "o").string()});
    CHECK(r.code == cli::kExitUsage);

    r = invoke({"impute", "--data", (f.dir / "absent.csv").string(), "--method", "MAR+Weight"});
    CHECK(r.code == cli::kExitFailure);
    fs::remove_all(f.dir);
}

TEST_CASE("margin JSON round trip") {
    const auto overall = AuxiliaryMargin::overall(25000.0, 1.2e5);
    const auto back = cli::margin_from_json(cli::margin_to_json(overall));
    CHECK(back.scope() == MarginScope::Overall);
    CHECK(back.overall_entry().total == 25000.0);
    CHECK(back.overall_entry().variance == 1.2e5);
    const auto ps = AuxiliaryMargin::per_stratum({{1, {14.0, 30.0}}, {2, {31.0, 150.0}}});
    const auto back2 = cli::margin_from_json(cli::margin_to_json(ps));
    CHECK(back2.strata().at(2).total == 31.0);
    CHECK(back2.strata().at(1).variance == 30.0);
}

TEST_CASE("SHA-256 digests") {
    CHECK(cli::sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(cli::sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("impute end to end recovers the response coefficient on x") {
    const auto f = scenario_data("recover", {-0.25, 0.1, 0.3, -1.1});
    const auto out = f.dir / "out";
    const auto r = invoke({"impute", "--data", f.data.string(), "--margin", f.margin.string(), "--method",
                           "AN+Constraint", "--seed", "11", "--iterations", "4000", "--burn-in", "2000", "--thin",
                           "40", "--out", out.string()});
    REQUIRE_MESSAGE(r.code == cli::kExitOk, r.err);
    const auto est = json::parse(slurp(out / "mi_estimates.json"));
    REQUIRE(est["parameters"].contains("gamma2"));
    const double g2 = est["parameters"]["gamma2"]["point"];
    const double se = est["parameters"]["gamma2"]["se"];
    CHECK(std::abs(g2 + 1.1) <= 3 * se);
    CHECK(est["total"]["L"] == 50);
    const double truth = population_total(f.pop);
    CHECK(std::abs(est["total"]["point"].get<double>() - truth) <= 3 * est["total"]["se"].get<double>());
    const auto acc = json::parse(slurp(out / "acceptance.json"));
    CHECK(acc["overall_ratio"].get<double>() > 0.1);
    const auto manifest = json::parse(slurp(out / "run_manifest.json"));
    CHECK(manifest["seeds"]["chain"] == 11);
    CHECK(manifest["config"]["data_sha256"] == cli::sha256_hex(slurp(f.data)));
    fs::remove_all(f.dir);
}
