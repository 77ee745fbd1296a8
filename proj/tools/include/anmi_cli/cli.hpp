#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "anmi/survey.hpp"

namespace anmi::cli {

/// Exit codes used by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Environment variable naming the default output root.
inline constexpr const char* kOutputRootEnv = "ANMI_OUTPUT_ROOT";

/// Run the command line `args` (args[0] is the program name). Diagnostics go
/// to `err`, listings and summaries to `out`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Margin declaration: {"scope": "overall"|"per-stratum", "totals": {...},
/// "variances": {...}} with keys "overall" or stratum labels. Throws
/// SchemaError on malformed input.
AuxiliaryMargin margin_from_json(const std::string& text);
std::string margin_to_json(const AuxiliaryMargin& margin);

/// Hex SHA-256 of the given bytes.
std::string sha256_hex(const std::string& bytes);

}  // namespace anmi::cli
