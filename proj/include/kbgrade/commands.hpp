#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace kbgrade {

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitData = 2,
  kExitNumeric = 3,
};

/// Runs one `kbgrade` invocation. `args` excludes the program name, e.g.
/// {"train", "--data", "grades.csv", "--seed", "7", "--out", "run1"}.
/// Subcommands: ingest, split, train, evaluate, grid, synth, explain.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Reads a flat `key = value` config file into `--key=value` arguments.
std::vector<std::string> config_arguments(const std::string& path);

}  // namespace kbgrade
