#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace uqd::cli {

inline constexpr std::string_view kToolVersion = "0.1.0";

enum ExitCode : int { kOk = 0, kConfig = 2, kIo = 3, kNumerical = 4 };

// Runs one subcommand (gen|train|eval|bench|compare). `args` excludes the
// program name. Diagnostics go to `err`; reports without an output path go
// to `out`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Rows of a report CSV (header checked, blank lines skipped).
std::vector<std::vector<std::string>> read_report(const std::string& path);

}  // namespace uqd::cli
