#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "anmi/survey.hpp"

namespace anmi {

namespace csv {

using Row = std::vector<std::string>;

/// Parse RFC-4180 text. Quoted fields may contain commas, doubled quotes and
/// line breaks. A trailing newline does not produce an empty record.
std::vector<Row> parse(std::string_view text);

/// Quote a field only when it contains a delimiter, quote, or line break.
std::string escape(std::string_view field);

void write_row(std::ostream& out, const Row& row);

/// Shortest text that parses back to the same double.
std::string format_double(double value);

std::string read_file(const std::string& path);

}  // namespace csv

/// Column order used for every population/sample file.
inline constexpr std::string_view kSampleHeader = "stratum,weight,y,x,r";

void write_sample_csv(std::ostream& out, const SurveySample& sample);
void write_sample_csv(const std::string& path, const SurveySample& sample);

/// Populations use the same columns with weight 1 and r 0.
void write_population_csv(std::ostream& out, const StratifiedPopulation& pop);

/// Parse and validate a sample file. Throws SchemaError naming every
/// offending line. N_s is recovered as round(weight * n_s).
SurveySample parse_sample_csv(std::string_view text);
SurveySample read_sample_csv(const std::string& path);

}  // namespace anmi
