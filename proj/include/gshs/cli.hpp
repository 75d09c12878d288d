#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gshs/scenarios.hpp"

namespace gshs::cli {

/// Exit codes of the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitCheckFailed = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitRuntime = 3;

/// Everything a command needs. Resolution flags end up in `overrides` under
/// the scenario parameter names (paths, dt, t_end, bin, grid).
struct RunConfig {
  std::string command;
  std::string scenario;
  Overrides overrides;
  std::filesystem::path out_dir;
  std::uint64_t seed = 42;
  /// Tolerance overrides for verify, keyed by check name.
  std::map<std::string, double> tolerances;
  int threads = 0;
  /// Number of leading paths written to trajectories.csv by simulate.
  std::size_t dump_paths = 0;
  /// Print wall-clock timings on standard error.
  bool timing = false;
};

/// Reads a JSON config file into `cfg`; keys present in the file are applied
/// on top of the current values.
void apply_config_file(const std::filesystem::path& file, RunConfig& cfg);

/// Checks the config invariants (known command and scenario, tolerances > 0).
void validate_config(const RunConfig& cfg);

int run_simulate(const RunConfig& cfg);
int run_solve(const RunConfig& cfg);
int run_verify(const RunConfig& cfg);
int run_compare(const RunConfig& cfg);

/// Parses the command line and dispatches; returns the process exit code.
int main(int argc, char** argv);

}  // namespace gshs::cli
