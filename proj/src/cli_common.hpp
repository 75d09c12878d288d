#pragma once

// Helpers shared by the command implementations.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gshs/cli.hpp"
#include "gshs/estimation.hpp"
#include "gshs/fpk.hpp"
#include "gshs/simulator.hpp"

namespace gshs::cli::detail {

using Json = nlohmann::ordered_json;

std::string fmt(double v);

/// CSV file with a leading comment line and a header row.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& file, const std::string& comment, const std::vector<std::string>& header);
  CsvWriter& operator<<(double v);
  CsvWriter& operator<<(long long v);
  CsvWriter& operator<<(const std::string& v);
  void end_row();

 private:
  void sep();
  std::ofstream out_;
  bool first_ = true;
};

class Timer {
 public:
  explicit Timer(bool enabled) : enabled_(enabled), start_(std::chrono::steady_clock::now()) {}
  void report(const char* what);

 private:
  bool enabled_;
  std::chrono::steady_clock::time_point start_;
};

Scenario load_scenario(const RunConfig& cfg);
std::string comment_line(const Scenario& s, const RunConfig& cfg);
void write_json(const std::filesystem::path& file, const Json& j);

/// Multiples of the bin width from 0 to t_end.
std::vector<double> law_times(const Scenario& s);

EnsembleSummary run_ensemble(const Scenario& s, const RunConfig& cfg, const std::vector<double>& times);

/// Grid-solver output on the scenario partition.
struct SolverRun {
  SolveResult result;
  std::optional<ThermostatResult> thermostat;
  std::optional<RateOperator> rates;
};

/// Runs the scenario's solver with snapshots at `times` (which must include
/// t_end). The step is automatic unless the user set dt explicitly.
SolverRun run_solver(const Scenario& s, const RunConfig& cfg, const std::vector<double>& times, double t_end);

/// Solver-side intensity of a snapshot.
IntensityEstimate solver_intensity(const Scenario& s, const SolverRun& run, const GridDensity& p);

/// z columns named z0, z1, ... for the partition's largest dimension.
std::vector<std::string> z_header(const Partition& part);
void write_cell(CsvWriter& csv, const Partition& part, std::size_t cell);

}  // namespace gshs::cli::detail
