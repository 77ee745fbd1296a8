#include "anmi/csv.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include "anmi/error.hpp"

namespace anmi {

namespace csv {

std::vector<Row> parse(std::string_view text) {
    std::vector<Row> rows;
    Row row;
    std::string field;
    bool in_quotes = false;
    bool field_started = false;

    auto end_field = [&] {
        row.push_back(std::move(field));
        field.clear();
        field_started = false;
    };
    auto end_row = [&] {
        end_field();
        rows.push_back(std::move(row));
        row.clear();
    };

    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                field.push_back(c);
            }
            continue;
        }
        switch (c) {
            case '"':
                in_quotes = true;
                field_started = true;
                break;
            case ',':
                end_field();
                field_started = true;
                break;
            case '\r':
                if (i + 1 < text.size() && text[i + 1] == '\n') ++i;
                end_row();
                break;
            case '\n':
                end_row();
                break;
            default:
                field.push_back(c);
                field_started = true;
        }
    }
    if (field_started || !field.empty() || !row.empty()) end_row();
    return rows;
}

std::string escape(std::string_view field) {
    if (field.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(field);
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

void write_row(std::ostream& out, const Row& row) {
    for (std::size_t i = 0; i < row.size(); ++i) {
        if (i) out << ',';
        out << escape(row[i]);
    }
    out << '\n';
}

std::string format_double(double value) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
    return std::string(buf, ptr);
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace csv

namespace {

void write_units(std::ostream& out, const SurveySample& sample) {
    out << kSampleHeader << '\n';
    for (const auto& u : sample.units) {
        csv::write_row(out, {std::to_string(u.stratum), csv::format_double(u.weight), std::to_string(u.y),
                             u.x ? std::to_string(*u.x) : std::string{}, std::to_string(u.r)});
    }
}

template <typename T>
bool parse_number(const std::string& text, T& value) {
    const char* first = text.data();
    const char* last = first + text.size();
    auto [ptr, ec] = std::from_chars(first, last, value);
    return ec == std::errc{} && ptr == last;
}

}  // namespace

void write_sample_csv(std::ostream& out, const SurveySample& sample) { write_units(out, sample); }

void write_sample_csv(const std::string& path, const SurveySample& sample) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    write_units(out, sample);
    if (!out) throw IoError("write failed for " + path);
}

void write_population_csv(std::ostream& out, const StratifiedPopulation& pop) {
    out << kSampleHeader << '\n';
    for (const auto& u : pop.units) {
        csv::write_row(out, {std::to_string(u.stratum), "1", std::to_string(u.y), std::to_string(u.x), "0"});
    }
}

SurveySample parse_sample_csv(std::string_view text) {
    auto rows = csv::parse(text);
    if (rows.empty()) throw SchemaError("sample file is empty; header row is mandatory");

    std::map<std::string, std::size_t> column;
    for (std::size_t i = 0; i < rows[0].size(); ++i) column[rows[0][i]] = i;
    for (const char* name : {"stratum", "weight", "y", "x", "r"}) {
        if (!column.contains(name)) throw SchemaError(std::string("header is missing column '") + name + "'");
    }

    std::ostringstream problems;
    std::size_t problem_count = 0;
    auto complain = [&](std::size_t line, const std::string& what) {
        problems << "\n  line " << line << ": " << what;
        ++problem_count;
    };

    SurveySample sample;
    std::map<int, double> stratum_weight;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& row = rows[r];
        const std::size_t line = r + 1;
        if (row.size() == 1 && row[0].empty()) continue;
        if (row.size() != rows[0].size()) {
            complain(line, "expected " + std::to_string(rows[0].size()) + " fields, got " + std::to_string(row.size()));
            continue;
        }
        SampleUnit u;
        bool ok = true;
        if (!parse_number(row[column["stratum"]], u.stratum)) {
            complain(line, "stratum '" + row[column["stratum"]] + "' is not an integer");
            ok = false;
        }
        if (!parse_number(row[column["weight"]], u.weight) || !std::isfinite(u.weight) || u.weight <= 0.0) {
            complain(line, "weight '" + row[column["weight"]] + "' is not a positive number");
            ok = false;
        }
        if (!parse_number(row[column["y"]], u.y) || u.y < 1 || u.y > 3) {
            complain(line, "y '" + row[column["y"]] + "' is not one of 1, 2, 3");
            ok = false;
        }
        if (!parse_number(row[column["r"]], u.r) || (u.r != 0 && u.r != 1)) {
            complain(line, "r '" + row[column["r"]] + "' is not 0 or 1");
            ok = false;
        }
        const auto& xs = row[column["x"]];
        if (xs.empty()) {
            if (ok && u.r != 1) {
                complain(line, "x is empty but r = 0");
                ok = false;
            }
        } else {
            int x = -1;
            if (!parse_number(xs, x) || (x != 0 && x != 1)) {
                complain(line, "x '" + xs + "' is not 0, 1, or empty");
                ok = false;
            } else if (ok && u.r == 1) {
                complain(line, "x is present but r = 1");
                ok = false;
            } else {
                u.x = x;
            }
        }
        if (!ok) continue;
        auto [it, inserted] = stratum_weight.emplace(u.stratum, u.weight);
        if (!inserted && std::fabs(it->second - u.weight) > 1e-9 * it->second) {
            complain(line, "weight differs from earlier units in stratum " + std::to_string(u.stratum));
            continue;
        }
        sample.units.push_back(u);
        ++sample.stratum_draws[u.stratum];
    }
    if (problem_count) {
        throw SchemaError("sample file has " + std::to_string(problem_count) + " invalid row(s):" + problems.str());
    }
    for (const auto& [s, n] : sample.stratum_draws) {
        sample.stratum_sizes[s] = std::llround(stratum_weight[s] * static_cast<double>(n));
    }
    return sample;
}

SurveySample read_sample_csv(const std::string& path) { return parse_sample_csv(csv::read_file(path)); }

}  // namespace anmi
