#pragma once

#include <cstddef>
#include <memory>
#include <vector>

#include "gshs/state_space.hpp"

namespace gshs {

/// Discretised pdf p_t with respect to nu, one value per cell.
struct GridDensity {
  std::shared_ptr<const Partition> partition;
  std::vector<double> p;
  double t = 0.0;

  /// p * nu(cell) for every cell.
  std::vector<double> masses() const;
  double mass() const;
  /// Total mass of mode q.
  double mode_mass(int q) const;
};

/// Entry of the jump-pair measure W over (pre cell, post cell).
struct PairRate {
  std::size_t from = 0;
  std::size_t to = 0;
  double rate = 0.0;
};

/// Time-binned jump measures. Cell values are measures per unit time (not
/// densities), stored as raw weights times a per-bin scale: for Monte Carlo
/// estimates the weights are integer jump counts and the scale is
/// 1 / (n_paths * bin_width), which keeps the counting identities exact. Every
/// per-cell array has partition->size() + 1 slots; the last one collects jumps
/// whose state lies outside the truncation.
struct IntensityEstimate {
  std::shared_ptr<const Partition> partition;
  double bin_width = 0.0;
  std::size_t n_bins = 0;
  std::vector<double> scale;

  std::vector<double> sink;         // r
  std::vector<double> source;       // r K
  std::vector<double> sink_spont;   // r^0
  std::vector<double> sink_forced;  // r^G
  std::vector<std::vector<PairRate>> pairs;  // W per bin, raw weights

  /// Adjacent-bin relative variation of the total rate after removing
  /// Monte Carlo noise; one entry per adjacent pair.
  std::vector<double> variation;
  double smoothness = 0.0;
  bool no_mean_intensity = false;

  std::size_t slots() const { return partition->size() + 1; }
  std::size_t outside_slot() const { return partition->size(); }
  double sink_at(std::size_t bin, std::size_t slot) const { return scale[bin] * sink[bin * slots() + slot]; }
  double source_at(std::size_t bin, std::size_t slot) const { return scale[bin] * source[bin * slots() + slot]; }
  double spont_at(std::size_t bin, std::size_t slot) const { return scale[bin] * sink_spont[bin * slots() + slot]; }
  double forced_at(std::size_t bin, std::size_t slot) const { return scale[bin] * sink_forced[bin * slots() + slot]; }
  /// r_t(E) and r_t K(E) of a bin, outside slot included.
  double sink_total(std::size_t bin) const;
  double source_total(std::size_t bin) const;
  /// Cellwise sink / source of a bin as measures per unit time.
  std::vector<double> sink_measure(std::size_t bin) const;
  std::vector<double> source_measure(std::size_t bin) const;
};

}  // namespace gshs
