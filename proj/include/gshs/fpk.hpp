#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "gshs/measures.hpp"
#include "gshs/model.hpp"

namespace gshs {

/// Raised when a requested time step exceeds the explicit stability bound.
class StabilityError : public Error {
 public:
  StabilityError(double dt, double bound);
  double bound() const noexcept { return bound_; }
  /// A step safely below the bound.
  double suggested() const noexcept { return 0.9 * bound_; }

 private:
  double bound_;
};

/// Compressed sparse rows.
struct SparseRows {
  std::vector<std::size_t> ptr{0};
  std::vector<std::size_t> idx;
  std::vector<double> val;

  std::size_t rows() const { return ptr.size() - 1; }
  double at(std::size_t row, std::size_t col) const;
  /// out = A x, rows split across OpenMP workers.
  void multiply(std::span<const double> x, std::span<double> out) const;
  /// Serial reference of multiply.
  void multiply_serial(std::span<const double> x, std::span<double> out) const;
};

/// Boundary face of a mode's truncation box.
struct BoundaryFace {
  int mode = 0;
  std::size_t axis = 0;
  Side side = Side::lower;
};

/// Finite-volume discretisation of L* on a partition. Normal fluxes use the
/// exponentially fitted (Scharfetter-Gummel) form, which reduces to upwinding
/// where the diffusion vanishes; cross-diffusion terms use averaged centred
/// differences. Truncation boundaries are closed unless listed as absorbing,
/// where p = 0 is imposed on the face.
struct TransportOperator {
  std::shared_ptr<const Partition> partition;
  /// Row c * max_dim + a: flux through the upper face of cell c along axis a.
  SparseRows faces;
  /// Row c: (L* p)(c) as a density rate.
  SparseRows lstar;

  struct Outflow {
    std::size_t face = 0;  // index into the absorbing list
    std::size_t cell = 0;
    double coef = 0.0;     // outgoing mass rate per unit density
  };
  std::vector<BoundaryFace> absorbing;
  std::vector<Outflow> outflow;
};

TransportOperator build_transport(const GshsModel& model, std::shared_ptr<const Partition> partition,
                                  std::span<const BoundaryFace> absorbing = {});

/// out = L* p (density rate per cell), parallel over cells.
void apply_lstar(const TransportOperator& op, std::span<const double> p, std::span<double> out);
void apply_lstar_serial(const TransportOperator& op, std::span<const double> p, std::span<double> out);
/// Convenience form with closed boundaries.
std::vector<double> apply_lstar(const GshsModel& model, const GridDensity& p);

/// Probability current j = f0 p - 1/2 div(a p).
struct CurrentField {
  std::shared_ptr<const Partition> partition;
  /// Normal flux through the upper face of each cell along each axis
  /// (c * max_dim + a); zero on closed truncation faces.
  std::vector<double> face;
  /// Cell-centred vector j (c * max_dim + a), centred differences of a p.
  std::vector<double> cell;

  double face_at(std::size_t c, std::size_t axis) const { return face[c * partition->max_dim() + axis]; }
  double cell_at(std::size_t c, std::size_t axis) const { return cell[c * partition->max_dim() + axis]; }
};

CurrentField probability_current(const GshsModel& model, const GridDensity& p);

/// Largest explicit step that keeps every Euler substep positive:
/// 1 / max_c (-L*_cc + 2 lambda_c).
double stability_bound(const TransportOperator& op, std::span<const double> rate);

/// Jump kernel discretised cell to cell: T(to, from) is the probability that a
/// jump from the centre region of `from` lands in `to`. Map kernels are
/// sub-sampled with `subsamples` points per axis, density kernels use midpoint
/// quadrature renormalised on the truncation, mode switches map a cell to the
/// same local cell of the target mode.
struct JumpTransfer {
  std::shared_ptr<const Partition> partition;
  struct Entry {
    std::size_t from = 0;
    std::size_t to = 0;
    double weight = 0.0;
  };
  std::vector<Entry> entries;  // sorted by (to, from)
  /// lambda at each cell centre.
  std::vector<double> rate;
  /// Fraction of each cell's jump mass landing outside the truncation.
  std::vector<double> lost;
};

JumpTransfer build_jump_transfer(const GshsModel& model, std::shared_ptr<const Partition> partition,
                                 int subsamples = 8);

/// Source density K*(lambda p) on the grid: (1 / nu(c)) sum T(c, c') lambda p nu(c').
void jump_source(const JumpTransfer& tr, std::span<const double> p, std::span<double> out);

struct SolveOptions {
  double t_end = 1.0;
  /// 0 picks a step from the stability bound.
  double dt = 0.0;
  /// Extra snapshot times in (0, t_end); 0 and t_end are always stored.
  std::vector<double> snapshot_times;
};

struct SolveResult {
  std::vector<GridDensity> snapshots;
  /// Total mass at each snapshot.
  std::vector<double> mass;
  /// Largest step used and the stability bound it was checked against.
  double dt = 0.0;
  double bound = 0.0;
  std::size_t steps = 0;
};

/// Pure-jump rates between cells: mass in `from` moves to `to` at `rate`.
struct RateOperator {
  std::shared_ptr<const Partition> partition;
  struct Entry {
    std::size_t from = 0;
    std::size_t to = 0;
    double rate = 0.0;
  };
  std::vector<Entry> entries;
  std::vector<double> out_rate;

  /// gamma(x, y) = lambda(x) k(x, y) from the model's reset kernel.
  static RateOperator from_model(const GshsModel& model, std::shared_ptr<const Partition> partition);
  /// CTMC generator Q (row = from, off-diagonal rates) on a partition of atoms.
  static RateOperator from_generator(const Eigen::MatrixXd& q, std::shared_ptr<const Partition> partition);
};

/// Master equation dp/dt(y) = sum_x gamma(x, y) p(x) - gamma(y, x) p(y), RK4.
/// Rejects dt > 1 / (2 max out-rate); the automatic step is min(1e-3, 0.9 bound).
SolveResult solve_master_equation(const RateOperator& gamma, const GridDensity& p0, const SolveOptions& options);

/// dp/dt = L* p + K*(lambda p) - lambda p for models without guard. Strang
/// splitting: half jump step, full transport step, half jump step, each
/// advanced with Heun's method.
SolveResult solve_spontaneous_fpk(const GshsModel& model, const GridDensity& p0, const SolveOptions& options);

/// Switching diffusion: dp/dt(q) = L* p(q) + sum_{q'} lambda(q') pi_{q'q} p(q') - lambda(q) p(q),
/// exchange terms evaluated pointwise on identical per-mode grids. Same
/// splitting as solve_spontaneous_fpk.
SolveResult solve_switching_fpk(const GshsModel& model, const GridDensity& p0, const SolveOptions& options);

struct FluxSample {
  double t = 0.0;       // end of the step
  std::size_t face = 0;
  double j_out = 0.0;   // step-averaged outgoing flux
};

struct ThermostatResult {
  SolveResult solution;
  /// Guard faces: (mode 0, lower) and (mode 1, upper).
  std::vector<BoundaryFace> guard_faces;
  /// Step-averaged outgoing flux per guard face, one entry per step and face.
  std::vector<FluxSample> flux;
  /// Per step: mass removed through the guard and mass injected on G'.
  std::vector<double> extracted;
  std::vector<double> injected;
  /// Density on each guard face per snapshot (face-major within a snapshot).
  std::vector<double> guard_values;
  /// One-sided extrapolation of the interior density to each guard face.
  std::vector<double> guard_extrapolated;
  std::size_t clipped = 0;
};

/// Forced-jump thermostat: interior FPK in both modes, p = 0 on the guard
/// faces, and the outgoing flux of each guard face injected into the two
/// cells adjacent to its image in the other mode. Heun time stepping.
ThermostatResult solve_forced_thermostat(const GshsModel& model, const GridDensity& p0, const SolveOptions& options);

/// Instantaneous jump measures implied by a solver state, as single-bin
/// intensity estimates with unit scale (cell values in mass per unit time).
IntensityEstimate spontaneous_intensity(const GshsModel& model, const GridDensity& p);
IntensityEstimate master_intensity(const RateOperator& gamma, const GridDensity& p);
IntensityEstimate thermostat_intensity(const GshsModel& model, const GridDensity& p);

}  // namespace gshs
