#pragma once

#include <cstdint>
#include <functional>
#include <string_view>
#include <vector>

#include "gshs/model.hpp"

namespace gshs {

enum class JumpKind : std::uint8_t { spontaneous, forced };
enum class PathStatus : std::uint8_t { completed, zeno_aborted, escaped };

std::string_view to_string(JumpKind kind);
std::string_view to_string(PathStatus status);

struct JumpRecord {
  double time = 0.0;
  HybridState pre;   // left limit X_{tau-}
  HybridState post;  // X_tau
  JumpKind kind = JumpKind::spontaneous;
};

struct SimulationCaps {
  std::size_t max_jumps = 1'000'000;
  /// Distance to a guard face below which a pre-jump state counts as on it.
  double tol = 1e-9;
  /// |z| beyond this on an unbounded axis marks the path as escaped.
  double overflow = 1e12;
};

struct Trajectory {
  std::vector<double> times;
  std::vector<HybridState> states;  // right-continuous: post-jump values
  std::vector<JumpRecord> jumps;
  PathStatus status = PathStatus::completed;

  std::size_t n_jumps() const { return jumps.size(); }
};

/// Euler-Maruyama between jumps. Forced jumps fire when a step crosses a guard
/// face (crossing time by linear interpolation along the step); spontaneous
/// jumps fire with probability 1 - exp(-lambda dt) per (sub)step. After a jump
/// the remainder of the step is integrated from the post-jump state, so the
/// sample grid stays at multiples of dt. States are stored every
/// `record_stride` steps (and at t = 0 and t_end).
Trajectory simulate_path(const GshsModel& model, const HybridState& x0, double t_end, double dt, Rng& rng,
                         const SimulationCaps& caps = {}, std::size_t record_stride = 1);

/// Independent stream for path `path_index`, a pure function of both seeds.
Rng path_stream(std::uint64_t master_seed, std::uint64_t path_index);

using InitialSampler = std::function<HybridState(Rng&)>;

struct EnsembleOptions {
  std::size_t n_paths = 1;
  double t_end = 1.0;
  double dt = 1e-3;
  std::uint64_t master_seed = 0;
  SimulationCaps caps;
  /// Times at which every path's state is kept; each must be a multiple of dt.
  std::vector<double> observe_times;
  /// OpenMP worker count; 0 keeps the runtime default.
  int threads = 0;
};

/// Per-path observations and jump records of an ensemble, stored flat and in
/// path order.
struct EnsembleSummary {
  std::size_t n_paths = 0;
  double t_end = 0.0;
  double dt = 0.0;
  std::uint64_t master_seed = 0;
  std::vector<double> observe_times;
  std::size_t max_dim = 0;
  std::vector<std::size_t> mode_dims;

  /// n_paths * n_times; -1 once the path has been aborted.
  std::vector<int> obs_q;
  /// n_paths * n_times * max_dim.
  std::vector<double> obs_z;
  std::vector<JumpRecord> jumps;
  /// jumps of path i are [jump_offsets[i], jump_offsets[i+1]).
  std::vector<std::size_t> jump_offsets;
  std::vector<PathStatus> status;

  std::size_t n_times() const { return observe_times.size(); }
  std::size_t time_index(double t) const;
  bool observed_valid(std::size_t path, std::size_t k) const { return obs_q[path * n_times() + k] >= 0; }
  HybridState observed(std::size_t path, std::size_t k) const;
  std::size_t count(PathStatus s) const;
  std::size_t count(JumpKind kind) const;
};

/// Ensemble over paths, parallel with OpenMP. Each path draws its initial state
/// and its dynamics from path_stream(master_seed, index), so the result does not
/// depend on scheduling or on the number of workers.
EnsembleSummary simulate_ensemble(const GshsModel& model, const InitialSampler& mu0, const EnsembleOptions& options);
/// Serial reference of simulate_ensemble; kept for equivalence tests.
EnsembleSummary simulate_ensemble_serial(const GshsModel& model, const InitialSampler& mu0,
                                         const EnsembleOptions& options);

/// Mean number of jumps per path over (0, t_end].
double expected_jump_count(const EnsembleSummary& summary);

}  // namespace gshs
