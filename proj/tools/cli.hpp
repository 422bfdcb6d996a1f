#pragma once

#include <map>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace bignet::cli {

/// Runs one command line (args[0] is the program name). Returns 0 on success,
/// 1 on a contract or I/O failure (a JSON error object is written to `err`),
/// and 2 on a usage error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Parses `key = value` lines; `#` starts a comment, blank lines are skipped.
/// Throws std::invalid_argument on malformed lines or repeated keys.
std::map<std::string, std::string> parse_key_values(std::string_view text);

/// Sweep grids.
std::vector<double> radius_grid();
std::vector<double> fraction_grid();

}  // namespace bignet::cli
