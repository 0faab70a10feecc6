#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace good::cli {

inline constexpr const char* kToolVersion = "0.1.0";

/// Runs one subcommand (synth, train, eval, bound, sweep). args excludes the
/// program name. Returns the process exit code: 0 on success, 2 on usage
/// errors, 1 on runtime failures. Outputs of a failed run are removed.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Hex SHA-256 of a file's bytes.
std::string file_digest(const std::string& path);

}  // namespace good::cli
