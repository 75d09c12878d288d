#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "gshs/measures.hpp"
#include "gshs/model.hpp"
#include "gshs/simulator.hpp"

namespace gshs {

/// Histogram estimate of the state law mu_t at a set of times.
struct EmpiricalLaw {
  std::shared_ptr<const Partition> partition;
  std::vector<double> times;
  std::size_t n_paths = 0;
  /// n_times * partition->size() path counts.
  std::vector<std::uint64_t> counts;
  /// Paths outside the truncation (or aborted) at each time.
  std::vector<std::uint64_t> missing;

  std::size_t time_index(double t) const;
  /// Fraction of paths per cell at time index k.
  std::vector<double> masses(std::size_t k) const;
  double deficit(std::size_t k) const;
  /// sum_c mass(c) * values[c], accumulated on integer counts first.
  double integrate(std::size_t k, std::span<const double> values) const;
};

EmpiricalLaw estimate_law(const EnsembleSummary& summary, std::shared_ptr<const Partition> partition,
                          std::span<const double> times);

/// Raw counts of the jump measure R over bins ((b-1) dt, b dt], split by kind,
/// plus post-jump counts and the (pre, post) pair counts. Arrays have
/// partition->size() + 1 slots per bin (last slot: outside the truncation).
struct JumpCounts {
  std::shared_ptr<const Partition> partition;
  double bin_width = 0.0;
  std::size_t n_bins = 0;
  std::size_t n_paths = 0;
  std::vector<std::uint64_t> pre_spont;
  std::vector<std::uint64_t> pre_forced;
  std::vector<std::uint64_t> post;
  struct Pair {
    std::size_t from;
    std::size_t to;
    std::uint64_t count;
  };
  std::vector<std::vector<Pair>> pairs;

  std::size_t slots() const { return partition->size() + 1; }
  /// R(cell x bin) / n_paths, both kinds.
  double r_measure(std::size_t bin, std::size_t slot) const;
  std::uint64_t bin_count(std::size_t bin) const;
};

/// Bin index of a jump time; times within 1e-9 of a bin edge go to the bin the
/// edge closes (bins are right-closed).
std::size_t time_bin(double t, double bin_width);

JumpCounts estimate_jump_measure(const EnsembleSummary& summary, std::shared_ptr<const Partition> partition,
                                 double bin_width);

/// Threshold on the adjacent-bin variation above which the estimate is flagged
/// as having no mean jump intensity.
inline constexpr double kSmoothnessThreshold = 5.0;

IntensityEstimate mean_jump_intensity(const JumpCounts& counts, double threshold = kSmoothnessThreshold);

/// Test function for the Dynkin / weak-FPK checks together with the box that
/// contains its support (empty support: no restriction).
struct TestFunction {
  ScalarField field;
  int mode = -1;  // support mode, -1 for all modes
  std::vector<Interval> support;
};

/// phi = c everywhere.
TestFunction constant_field(double c);
/// Product of per-axis C^2 bumps (1 - u^2)^3, u = (z - center) / radius, on
/// mode q (on every mode of matching dimension when q < 0).
TestFunction smooth_bump(int q, std::vector<double> center, std::vector<double> radius);

struct DynkinReport {
  double residual = 0.0;        // |lhs - diffusion_term - jump_term|
  double lhs = 0.0;             // (mu_t - mu_0) phi
  double diffusion_term = 0.0;  // int_0^t mu_s(L phi) ds
  double jump_term = 0.0;       // int_0^t r_s (K - I) phi ds
};

/// Residual of the rewritten Dynkin formula on histogram data. Functions are
/// evaluated at cell centres; the time integral of mu_s(L phi) uses the
/// trapezoid rule on the law's times and the jump integral sums the intensity
/// bins up to t. Throws if the support of phi leaves the truncation.
DynkinReport dynkin_residual(const EmpiricalLaw& law, const IntensityEstimate& intensity, const GshsModel& model,
                             const TestFunction& phi, double t);

/// Same residual on grid-solver output: densities and instantaneous
/// (single-bin) intensities at matching snapshot times, both integrated by the
/// trapezoid rule.
DynkinReport dynkin_residual(std::span<const GridDensity> snapshots, std::span<const IntensityEstimate> intensities,
                             const GshsModel& model, const TestFunction& phi, double t);

/// Standard error of the Monte Carlo Dynkin residual: per-path increments of
/// phi(X_t) - phi(X_0) - int L phi - sum over jumps of (K - I) phi, with states
/// mapped to cell centres as in dynkin_residual.
double dynkin_standard_error(const EnsembleSummary& summary, std::shared_ptr<const Partition> partition,
                             const GshsModel& model, const TestFunction& phi, double t, std::span<const double> law_times);

/// Central difference of cell masses: (m(next) - m(prev)) / (t_next - t_prev).
std::vector<double> law_derivative(const GridDensity& prev, const GridDensity& next);
std::vector<double> law_derivative(const EmpiricalLaw& law, std::size_t k);

struct Theorem4Report {
  std::vector<double> residual;  // per cell
  double max_abs = 0.0;
  double l1 = 0.0;
};

/// residual(c) = mu'_t(c) - (L* mu_t)(c) - (r K - r)(c) for one intensity bin.
Theorem4Report theorem4_check(std::span<const double> law_derivative, std::span<const double> lstar_measure,
                              const IntensityEstimate& intensity, std::size_t bin);

/// sum over cells of mode q (all modes when q < 0) of |a - b|.
double l1_distance(std::span<const double> a, std::span<const double> b, const Partition& partition, int q = -1);
std::vector<double> mode_marginals(const Partition& partition, std::span<const double> masses);

}  // namespace gshs
