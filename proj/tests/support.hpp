#pragma once

// Small drivers shared by the unit tests and the acceptance binary.

#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "gshs/estimation.hpp"
#include "gshs/fpk.hpp"
#include "gshs/scenarios.hpp"
#include "gshs/simulator.hpp"

namespace gshs::testing {

inline std::vector<double> bin_times(const Scenario& s) {
  const auto n = static_cast<std::size_t>(std::llround(s.t_end / s.bin_width));
  std::vector<double> t(n + 1);
  for (std::size_t k = 0; k <= n; ++k) t[k] = static_cast<double>(k) * s.bin_width;
  t.back() = s.t_end;
  return t;
}

inline EnsembleSummary run_paths(const Scenario& s, std::uint64_t seed, const std::vector<double>& times,
                                 int threads = 0) {
  EnsembleOptions opt;
  opt.n_paths = s.n_paths;
  opt.t_end = s.t_end;
  opt.dt = s.dt;
  opt.master_seed = seed;
  opt.observe_times = times;
  opt.threads = threads;
  return simulate_ensemble(s.model, s.mu0.sample, opt);
}

struct Solved {
  SolveResult result;
  std::optional<ThermostatResult> thermostat;
  std::optional<RateOperator> rates;
};

/// Runs the scenario's grid solver up to t_end; snapshot times outside (0, t_end) are dropped.
inline Solved run_grid(const Scenario& s, const std::vector<double>& snapshots, double t_end, double dt = 0.0) {
  SolveOptions opt;
  opt.t_end = t_end;
  opt.dt = dt;
  for (double t : snapshots)
    if (t > 1e-12 && t < t_end - 1e-12) opt.snapshot_times.push_back(t);
  const auto p0 = s.mu0.density(s.partition);
  Solved out;
  switch (s.solver) {
    case SolverKind::master:
      out.rates = s.generator ? RateOperator::from_generator(*s.generator, s.partition)
                              : RateOperator::from_model(s.model, s.partition);
      out.result = solve_master_equation(*out.rates, p0, opt);
      break;
    case SolverKind::spontaneous: out.result = solve_spontaneous_fpk(s.model, p0, opt); break;
    case SolverKind::switching: out.result = solve_switching_fpk(s.model, p0, opt); break;
    case SolverKind::thermostat:
      out.thermostat = solve_forced_thermostat(s.model, p0, opt);
      out.result = out.thermostat->solution;
      break;
    case SolverKind::none: break;
  }
  return out;
}

inline IntensityEstimate grid_intensity(const Scenario& s, const Solved& run, const GridDensity& p) {
  if (s.solver == SolverKind::master) return master_intensity(*run.rates, p);
  if (s.solver == SolverKind::thermostat) return thermostat_intensity(s.model, p);
  return spontaneous_intensity(s.model, p);
}

/// One-mode diffusion on R: dz = drift(z) dt + sigma dB, no jumps.
inline GshsModel line_diffusion(std::function<double(double)> drift, double sigma) {
  GshsModel m;
  ModeSpec mode;
  mode.dim = 1;
  mode.box = {{-kInf, kInf}};
  m.modes = {mode};
  m.noise_count = 1;
  m.drift = [drift](int, std::span<const double> z, std::span<double> out) { out[0] = drift(z[0]); };
  m.noise = [sigma](int, std::span<const double>, std::span<double> out) { out[0] = sigma; };
  m.rate = [](int, std::span<const double>) { return 0.0; };
  m.rate_bound = {0.0};
  m.reset = DeterministicMap{[](const HybridState& x) { return x; },
                             [](const HybridState& y) { return std::vector<HybridState>{y}; },
                             [](const HybridState&) { return 1.0; }};
  return m;
}

inline std::shared_ptr<const Partition> line_grid(double lo, double hi, std::size_t n) {
  return std::make_shared<Partition>(std::vector<ModeGrid>{ModeGrid{{n}, {{lo, hi}}}});
}

/// Sums fine-cell values into the coarse cells holding their centres.
inline std::vector<double> aggregate(std::span<const double> fine, const Partition& fine_part,
                                     const Partition& coarse) {
  std::vector<double> out(coarse.size(), 0.0);
  for (std::size_t c = 0; c < fine_part.size(); ++c) {
    const auto z = fine_part.center(c);
    const auto target = coarse.try_locate(fine_part.mode_of(c), z);
    if (target) out[*target] += fine[c];
  }
  return out;
}

inline double l1(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += std::abs(a[i] - b[i]);
  return acc;
}

}  // namespace gshs::testing
