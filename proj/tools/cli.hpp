#pragma once

#include <string>
#include <vector>

namespace postrisk::cli {

/// Runs one subcommand (gen|embed|train|eval|sweep). args excludes argv[0].
/// Returns the process exit code; failures print a one-line diagnostic to stderr.
int run(const std::vector<std::string>& args);

}  // namespace postrisk::cli
