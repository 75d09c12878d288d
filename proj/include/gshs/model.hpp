#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "gshs/state_space.hpp"

namespace gshs {

/// Random stream type. One stream per path / worker, never shared.
using Rng = std::mt19937_64;

using DriftFn = std::function<void(int q, std::span<const double> z, std::span<double> out)>;
/// Writes the r noise fields column by column: out[l * dim + i] = f_l^i(q, z).
using NoiseFn = std::function<void(int q, std::span<const double> z, std::span<double> out)>;
using RateFn = std::function<double(int q, std::span<const double> z)>;

/// Single deterministic reset map with the data needed by its dual.
struct DeterministicMap {
  std::function<HybridState(const HybridState&)> map;
  /// Preimages of a point; empty function when the map has no declared inverse.
  std::function<std::vector<HybridState>(const HybridState&)> inverse;
  /// |det| of the Jacobian of the map at a (pre-image) point.
  std::function<double(const HybridState&)> jacobian;
};

struct MapBranch {
  std::function<double(const HybridState&)> weight;
  DeterministicMap map;
};

/// K(x, .) = sum_k pi_k(x) delta_{Psi_k(x)}.
struct MapMixture {
  std::vector<MapBranch> branches;
};

/// K(x, dy) = k(x, y) nu(dy). The sampler is optional; without it the kernel
/// can only be used by the grid solvers.
struct DensityKernel {
  std::function<double(const HybridState& x, const HybridState& y)> density;
  std::function<HybridState(const HybridState&, Rng&)> sampler;
};

/// K((q,z), .) = sum_{q' != q} pi_{q q'}(z) delta_{(q', z)}.
struct ModeSwitch {
  std::function<double(int from, int to, std::span<const double> z)> pi;
};

using ResetKernel = std::variant<DeterministicMap, MapMixture, DensityKernel, ModeSwitch>;

struct GshsModel {
  std::vector<ModeSpec> modes;
  std::size_t noise_count = 0;
  DriftFn drift;
  NoiseFn noise;
  RateFn rate;
  /// Declared upper bound of the jump rate in each mode.
  std::vector<double> rate_bound;
  ResetKernel reset;

  const ModeSpec& mode(int q) const { return modes.at(static_cast<std::size_t>(q)); }
  std::size_t dim(int q) const { return mode(q).dim; }
  bool has_guard() const;
};

/// Structural and sampled checks of the model invariants (box geometry, guard
/// placement, rate bounds, kernel normalisation, resets landing off the guard,
/// zero normal diffusion on non-guard faces). Throws ValidationError.
void validate(const GshsModel& model, std::uint64_t seed = 0x5eed);

bool in_guard(const GshsModel& model, const HybridState& x, double tol);

/// a(x) = sum_l f_l(x) f_l(x)^T; empty on discrete modes.
Eigen::MatrixXd diffusion_matrix(const GshsModel& model, const HybridState& x);
/// Row-major entries of a(q, z) written into `out` (dim * dim).
void diffusion_entries(const GshsModel& model, int q, std::span<const double> z, std::span<double> out);

/// Scalar test function on E. Missing derivative callbacks fall back to
/// centred finite differences.
struct ScalarField {
  std::function<double(int q, std::span<const double> z)> value;
  std::function<void(int q, std::span<const double> z, std::span<double> grad)> gradient;
  /// Row-major dim * dim Hessian.
  std::function<void(int q, std::span<const double> z, std::span<double> hess)> hessian;
};

/// (L phi)(x) with L = f0 . grad + 1/2 a : Hess. Zero on discrete modes.
double generator_apply(const GshsModel& model, const ScalarField& phi, const HybridState& x);
/// Same operator with derivatives from centred differences of step `h` times
/// the axis scale (box width when bounded, otherwise 1).
double generator_apply_fd(const GshsModel& model, const ScalarField& phi, const HybridState& x,
                          double h = 1e-4);

HybridState reset_sample(const GshsModel& model, const HybridState& x, Rng& rng);

/// (K phi)(x) = E[phi(Y)], Y ~ K(x, .). Density kernels integrate by midpoint
/// quadrature on `partition`, which is then required, normalized to unit mass.
double kernel_apply(const GshsModel& model, const ScalarField& phi, const HybridState& x,
                    const Partition* partition = nullptr);

/// (K* g)(x) for the dual kernel, g given on a grid.
double dual_apply(const GshsModel& model, const GridField& g, const HybridState& x);

}  // namespace gshs
