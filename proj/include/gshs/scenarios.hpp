#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gshs/measures.hpp"
#include "gshs/model.hpp"

namespace gshs {

/// Initial law mu_0: a sampler for the simulator and exact cell masses for the
/// grid solvers.
struct InitialLaw {
  std::string name;
  std::function<HybridState(Rng&)> sample;
  std::function<std::vector<double>(const Partition&)> masses;

  /// Density p_0 = mass / nu(cell) on a partition.
  GridDensity density(std::shared_ptr<const Partition> partition) const;
};

enum class SolverKind { none, master, spontaneous, switching, thermostat };

std::string_view to_string(SolverKind kind);

/// A catalog entry with every parameter resolved.
struct Scenario {
  std::string name;
  GshsModel model;
  InitialLaw mu0;
  std::shared_ptr<const Partition> partition;
  /// Resolved numeric parameters, including the resolution defaults below.
  std::map<std::string, double> params;

  double dt = 1e-3;
  double t_end = 1.0;
  std::size_t n_paths = 100000;
  double bin_width = 0.1;
  SolverKind solver = SolverKind::none;
  /// CTMC generator (row = from) for the purely discrete scenarios.
  std::optional<Eigen::MatrixXd> generator;
};

/// Overrides keyed by parameter name. Values are numbers, except `initial`
/// which selects the initial law by name.
using Overrides = std::map<std::string, std::string>;

/// Catalog names in a fixed order.
const std::vector<std::string>& catalog();

/// Builds and validates a catalog entry. Throws ValidationError for unknown
/// names or parameters and for parameter values that break the model
/// invariants.
Scenario build(const std::string& name, const Overrides& overrides = {});

}  // namespace gshs
