#include "gshs/estimation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace gshs {

// ---------------------------------------------------------------- measures

std::vector<double> GridDensity::masses() const {
  std::vector<double> m(p.size());
  for (std::size_t c = 0; c < p.size(); ++c) m[c] = p[c] * partition->cell_volume(c);
  return m;
}

double GridDensity::mass() const {
  double acc = 0.0;
  for (std::size_t c = 0; c < p.size(); ++c) acc += p[c] * partition->cell_volume(c);
  return acc;
}

double GridDensity::mode_mass(int q) const {
  double acc = 0.0;
  const std::size_t first = partition->offset(q);
  for (std::size_t c = first; c < first + partition->mode_cells(q); ++c) acc += p[c] * partition->cell_volume(c);
  return acc;
}

double IntensityEstimate::sink_total(std::size_t bin) const {
  const auto first = sink.begin() + static_cast<std::ptrdiff_t>(bin * slots());
  return scale[bin] * std::accumulate(first, first + static_cast<std::ptrdiff_t>(slots()), 0.0);
}

double IntensityEstimate::source_total(std::size_t bin) const {
  const auto first = source.begin() + static_cast<std::ptrdiff_t>(bin * slots());
  return scale[bin] * std::accumulate(first, first + static_cast<std::ptrdiff_t>(slots()), 0.0);
}

std::vector<double> IntensityEstimate::sink_measure(std::size_t bin) const {
  std::vector<double> out(slots());
  for (std::size_t s = 0; s < slots(); ++s) out[s] = sink_at(bin, s);
  return out;
}

std::vector<double> IntensityEstimate::source_measure(std::size_t bin) const {
  std::vector<double> out(slots());
  for (std::size_t s = 0; s < slots(); ++s) out[s] = source_at(bin, s);
  return out;
}

// ---------------------------------------------------------------- laws

namespace {

bool same_time(double a, double b) { return std::abs(a - b) <= 1e-9 * std::max(1.0, std::abs(b)); }

std::size_t slot_of(const Partition& part, const HybridState& x) {
  auto c = part.try_locate(x.q, x.z);
  return c ? *c : part.size();
}

void require_same(const Partition& a, const Partition& b) {
  if (!(&a == &b || a == b)) throw Error("mismatched partitions");
}

}  // namespace

std::size_t EmpiricalLaw::time_index(double t) const {
  for (std::size_t k = 0; k < times.size(); ++k)
    if (same_time(times[k], t)) return k;
  throw Error("time " + std::to_string(t) + " is not stored in the empirical law");
}

std::vector<double> EmpiricalLaw::masses(std::size_t k) const {
  const std::size_t n = partition->size();
  std::vector<double> m(n);
  for (std::size_t c = 0; c < n; ++c) m[c] = static_cast<double>(counts[k * n + c]) / static_cast<double>(n_paths);
  return m;
}

double EmpiricalLaw::deficit(std::size_t k) const {
  return static_cast<double>(missing[k]) / static_cast<double>(n_paths);
}

double EmpiricalLaw::integrate(std::size_t k, std::span<const double> values) const {
  const std::size_t n = partition->size();
  double acc = 0.0;
  for (std::size_t c = 0; c < n; ++c)
    if (counts[k * n + c] != 0) acc += static_cast<double>(counts[k * n + c]) * values[c];
  return acc / static_cast<double>(n_paths);
}

EmpiricalLaw estimate_law(const EnsembleSummary& summary, std::shared_ptr<const Partition> partition,
                          std::span<const double> times) {
  EmpiricalLaw law;
  law.partition = std::move(partition);
  law.times.assign(times.begin(), times.end());
  law.n_paths = summary.n_paths;
  const std::size_t n = law.partition->size();
  law.counts.assign(times.size() * n, 0);
  law.missing.assign(times.size(), 0);
  for (std::size_t k = 0; k < times.size(); ++k) {
    const std::size_t ks = summary.time_index(times[k]);
    for (std::size_t i = 0; i < summary.n_paths; ++i) {
      if (!summary.observed_valid(i, ks)) {
        ++law.missing[k];
        continue;
      }
      const auto x = summary.observed(i, ks);
      if (auto c = law.partition->try_locate(x.q, x.z)) {
        ++law.counts[k * n + *c];
      } else {
        ++law.missing[k];
      }
    }
  }
  return law;
}

// ---------------------------------------------------------------- jumps

std::size_t time_bin(double t, double bin_width) {
  const double u = t / bin_width;
  const double k = std::round(u);
  const double pos = std::abs(u - k) <= 1e-9 * std::max(1.0, k) ? k : std::ceil(u);
  return pos < 1.0 ? 0 : static_cast<std::size_t>(pos) - 1;
}

double JumpCounts::r_measure(std::size_t bin, std::size_t slot) const {
  const std::size_t i = bin * slots() + slot;
  return static_cast<double>(pre_spont[i] + pre_forced[i]) / static_cast<double>(n_paths);
}

std::uint64_t JumpCounts::bin_count(std::size_t bin) const {
  std::uint64_t acc = 0;
  for (std::size_t s = 0; s < slots(); ++s) acc += pre_spont[bin * slots() + s] + pre_forced[bin * slots() + s];
  return acc;
}

JumpCounts estimate_jump_measure(const EnsembleSummary& summary, std::shared_ptr<const Partition> partition,
                                 double bin_width) {
  if (!(bin_width > 0.0)) throw Error("bin width must be positive");
  JumpCounts jc;
  jc.partition = std::move(partition);
  jc.bin_width = bin_width;
  jc.n_paths = summary.n_paths;
  const double nb = std::round(summary.t_end / bin_width);
  if (std::abs(nb * bin_width - summary.t_end) > 1e-9 * std::max(1.0, summary.t_end))
    throw Error("t_end must be a multiple of the bin width");
  jc.n_bins = static_cast<std::size_t>(nb);
  const std::size_t slots = jc.slots();
  jc.pre_spont.assign(jc.n_bins * slots, 0);
  jc.pre_forced.assign(jc.n_bins * slots, 0);
  jc.post.assign(jc.n_bins * slots, 0);
  std::vector<std::map<std::pair<std::size_t, std::size_t>, std::uint64_t>> pairs(jc.n_bins);
  for (const auto& r : summary.jumps) {
    const std::size_t b = std::min(time_bin(r.time, bin_width), jc.n_bins - 1);
    const std::size_t from = slot_of(*jc.partition, r.pre);
    const std::size_t to = slot_of(*jc.partition, r.post);
    (r.kind == JumpKind::forced ? jc.pre_forced : jc.pre_spont)[b * slots + from] += 1;
    jc.post[b * slots + to] += 1;
    pairs[b][{from, to}] += 1;
  }
  jc.pairs.resize(jc.n_bins);
  for (std::size_t b = 0; b < jc.n_bins; ++b)
    for (const auto& [key, count] : pairs[b]) jc.pairs[b].push_back({key.first, key.second, count});
  return jc;
}

IntensityEstimate mean_jump_intensity(const JumpCounts& counts, double threshold) {
  IntensityEstimate est;
  est.partition = counts.partition;
  est.bin_width = counts.bin_width;
  est.n_bins = counts.n_bins;
  const std::size_t slots = counts.slots();
  const double scale = 1.0 / (static_cast<double>(counts.n_paths) * counts.bin_width);
  est.scale.assign(counts.n_bins, scale);
  est.sink.resize(counts.n_bins * slots);
  est.source.resize(counts.n_bins * slots);
  est.sink_spont.resize(counts.n_bins * slots);
  est.sink_forced.resize(counts.n_bins * slots);
  for (std::size_t i = 0; i < counts.n_bins * slots; ++i) {
    est.sink_spont[i] = static_cast<double>(counts.pre_spont[i]);
    est.sink_forced[i] = static_cast<double>(counts.pre_forced[i]);
    est.sink[i] = static_cast<double>(counts.pre_spont[i] + counts.pre_forced[i]);
    est.source[i] = static_cast<double>(counts.post[i]);
  }
  est.pairs.resize(counts.n_bins);
  for (std::size_t b = 0; b < counts.n_bins; ++b)
    for (const auto& p : counts.pairs[b]) est.pairs[b].push_back({p.from, p.to, static_cast<double>(p.count)});

  // Adjacent-bin variation of r_t(E), with 3 sigma of counting noise removed.
  for (std::size_t b = 0; b + 1 < counts.n_bins; ++b) {
    const double c0 = static_cast<double>(counts.bin_count(b));
    const double c1 = static_cast<double>(counts.bin_count(b + 1));
    const double r0 = c0 * scale;
    const double r1 = c1 * scale;
    const double sigma = std::sqrt(c0 + c1 + 1.0) * scale;
    const double excess = std::max(0.0, std::abs(r0 - r1) - 3.0 * sigma);
    const double denom = std::max(std::min(r0, r1), sigma);
    est.variation.push_back(excess / denom);
  }
  est.smoothness = est.variation.empty() ? 0.0 : *std::max_element(est.variation.begin(), est.variation.end());
  est.no_mean_intensity = est.smoothness > threshold;
  return est;
}

// ---------------------------------------------------------------- test functions

TestFunction constant_field(double c) {
  TestFunction tf;
  tf.field.value = [c](int, std::span<const double>) { return c; };
  tf.field.gradient = [](int, std::span<const double>, std::span<double> g) { std::fill(g.begin(), g.end(), 0.0); };
  tf.field.hessian = [](int, std::span<const double>, std::span<double> h) { std::fill(h.begin(), h.end(), 0.0); };
  return tf;
}

TestFunction smooth_bump(int q, std::vector<double> center, std::vector<double> radius) {
  if (center.size() != radius.size() || center.empty()) throw Error("bump needs matching center and radius");
  for (double r : radius)
    if (!(r > 0.0)) throw Error("bump radius must be positive");
  TestFunction tf;
  tf.mode = q;
  for (std::size_t a = 0; a < center.size(); ++a) tf.support.push_back({center[a] - radius[a], center[a] + radius[a]});

  // Per-axis profile b(u) = (1 - u^2)^3 and its first two derivatives in u.
  struct Profile {
    double v, d1, d2;
  };
  auto profile = [](double u) -> Profile {
    if (std::abs(u) >= 1.0) return {0.0, 0.0, 0.0};
    const double w = 1.0 - u * u;
    return {w * w * w, -6.0 * u * w * w, -6.0 * w * w + 24.0 * u * u * w};
  };
  auto applies = [q, d = center.size()](int mode, std::span<const double> z) {
    return (q < 0 || mode == q) && z.size() == d;
  };
  auto axes = [=](std::span<const double> z) {
    std::vector<Profile> p(center.size());
    for (std::size_t a = 0; a < center.size(); ++a) {
      const auto raw = profile((z[a] - center[a]) / radius[a]);
      p[a] = {raw.v, raw.d1 / radius[a], raw.d2 / (radius[a] * radius[a])};
    }
    return p;
  };
  tf.field.value = [=](int mode, std::span<const double> z) {
    if (!applies(mode, z)) return 0.0;
    double v = 1.0;
    for (const auto& p : axes(z)) v *= p.v;
    return v;
  };
  tf.field.gradient = [=](int mode, std::span<const double> z, std::span<double> g) {
    std::fill(g.begin(), g.end(), 0.0);
    if (!applies(mode, z)) return;
    const auto p = axes(z);
    for (std::size_t i = 0; i < p.size(); ++i) {
      double v = p[i].d1;
      for (std::size_t k = 0; k < p.size(); ++k)
        if (k != i) v *= p[k].v;
      g[i] = v;
    }
  };
  tf.field.hessian = [=](int mode, std::span<const double> z, std::span<double> h) {
    std::fill(h.begin(), h.end(), 0.0);
    if (!applies(mode, z)) return;
    const auto p = axes(z);
    const std::size_t n = p.size();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double v = 1.0;
        for (std::size_t k = 0; k < n; ++k) {
          if (i == j && k == i) v *= p[k].d2;
          else if (k == i || k == j) v *= p[k].d1;
          else v *= p[k].v;
        }
        h[i * n + j] = v;
      }
  };
  return tf;
}

// ---------------------------------------------------------------- Dynkin

namespace {

void check_support(const TestFunction& phi, const Partition& part) {
  if (phi.support.empty()) return;
  for (std::size_t q = 0; q < part.mode_count(); ++q) {
    const int mode = static_cast<int>(q);
    if (phi.mode >= 0 && phi.mode != mode) continue;
    const auto& g = part.grid(mode);
    if (g.dim() != phi.support.size()) continue;
    for (std::size_t a = 0; a < g.dim(); ++a) {
      if (phi.support[a].lo < g.truncation[a].lo - 1e-12 || phi.support[a].hi > g.truncation[a].hi + 1e-12)
        throw Error("test function support exceeds the truncation box of mode " + std::to_string(mode));
    }
  }
}

// phi, L phi and (K - I) phi at every cell centre.
struct CellValues {
  std::vector<double> phi, lphi, jump;
};

CellValues cell_values(const Partition& part, const GshsModel& model, const TestFunction& phi) {
  CellValues v;
  const std::size_t n = part.size();
  v.phi.resize(n);
  v.lphi.resize(n);
  v.jump.resize(n);
  for (std::size_t c = 0; c < n; ++c) {
    const HybridState x{part.mode_of(c), part.center(c)};
    v.phi[c] = phi.field.value(x.q, x.z);
    v.lphi[c] = generator_apply(model, phi.field, x);
    v.jump[c] = kernel_apply(model, phi.field, x, &part) - v.phi[c];
  }
  return v;
}

// Indices of stored times in [0, t] in ascending order; must start at 0 and end at t.
std::vector<std::size_t> times_up_to(std::span<const double> times, double t) {
  std::vector<std::size_t> idx;
  for (std::size_t k = 0; k < times.size(); ++k)
    if (times[k] <= t * (1.0 + 1e-12) + 1e-15) idx.push_back(k);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return times[a] < times[b]; });
  if (idx.empty() || !same_time(times[idx.front()], 0.0) || !same_time(times[idx.back()], t))
    throw Error("stored times must include 0 and t");
  return idx;
}

std::size_t bins_up_to(double t, double bin_width) {
  const double nb = std::round(t / bin_width);
  if (std::abs(nb * bin_width - t) > 1e-9 * std::max(1.0, t)) throw Error("t must be a multiple of the bin width");
  return static_cast<std::size_t>(nb);
}

}  // namespace

DynkinReport dynkin_residual(const EmpiricalLaw& law, const IntensityEstimate& intensity, const GshsModel& model,
                             const TestFunction& phi, double t) {
  const auto& part = *law.partition;
  require_same(part, *intensity.partition);
  check_support(phi, part);
  const auto v = cell_values(part, model, phi);
  const auto idx = times_up_to(law.times, t);
  const std::size_t n = part.size();

  DynkinReport rep;
  {
    // Difference taken on integer counts so that constant phi cancels exactly.
    const std::size_t k0 = idx.front();
    const std::size_t kt = idx.back();
    double acc = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      const auto d = static_cast<std::int64_t>(law.counts[kt * n + c]) - static_cast<std::int64_t>(law.counts[k0 * n + c]);
      if (d != 0) acc += static_cast<double>(d) * v.phi[c];
    }
    rep.lhs = acc / static_cast<double>(law.n_paths);
  }
  for (std::size_t j = 0; j + 1 < idx.size(); ++j) {
    const double h = law.times[idx[j + 1]] - law.times[idx[j]];
    rep.diffusion_term += 0.5 * h * (law.integrate(idx[j], v.lphi) + law.integrate(idx[j + 1], v.lphi));
  }
  const std::size_t nb = std::min(bins_up_to(t, intensity.bin_width), intensity.n_bins);
  for (std::size_t b = 0; b < nb; ++b) {
    double acc = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      const double w = intensity.sink[b * intensity.slots() + c];
      if (w != 0.0) acc += w * v.jump[c];
    }
    rep.jump_term += intensity.bin_width * intensity.scale[b] * acc;
  }
  rep.residual = std::abs(rep.lhs - rep.diffusion_term - rep.jump_term);
  return rep;
}

DynkinReport dynkin_residual(std::span<const GridDensity> snapshots, std::span<const IntensityEstimate> intensities,
                             const GshsModel& model, const TestFunction& phi, double t) {
  if (snapshots.empty() || snapshots.size() != intensities.size())
    throw Error("need one intensity per density snapshot");
  const auto& part = *snapshots.front().partition;
  for (const auto& s : snapshots) require_same(part, *s.partition);
  check_support(phi, part);
  const auto v = cell_values(part, model, phi);
  std::vector<double> times;
  for (const auto& s : snapshots) times.push_back(s.t);
  const auto idx = times_up_to(times, t);

  auto dot = [](std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (std::size_t c = 0; c < b.size(); ++c) acc += a[c] * b[c];
    return acc;
  };
  auto jump_rate = [&](std::size_t k) {
    const auto& in = intensities[k];
    double acc = 0.0;
    for (std::size_t c = 0; c < part.size(); ++c) acc += in.sink[c] * v.jump[c];
    return in.scale[0] * acc;
  };
  const auto m0 = snapshots[idx.front()].masses();
  const auto mt = snapshots[idx.back()].masses();
  DynkinReport rep;
  rep.lhs = dot(mt, v.phi) - dot(m0, v.phi);
  for (std::size_t j = 0; j + 1 < idx.size(); ++j) {
    const double h = times[idx[j + 1]] - times[idx[j]];
    rep.diffusion_term +=
        0.5 * h * (dot(snapshots[idx[j]].masses(), v.lphi) + dot(snapshots[idx[j + 1]].masses(), v.lphi));
    rep.jump_term += 0.5 * h * (jump_rate(idx[j]) + jump_rate(idx[j + 1]));
  }
  rep.residual = std::abs(rep.lhs - rep.diffusion_term - rep.jump_term);
  return rep;
}

double dynkin_standard_error(const EnsembleSummary& summary, std::shared_ptr<const Partition> partition,
                             const GshsModel& model, const TestFunction& phi, double t,
                             std::span<const double> law_times) {
  const auto& part = *partition;
  check_support(phi, part);
  const auto v = cell_values(part, model, phi);
  const auto idx = times_up_to(law_times, t);
  std::vector<std::size_t> ks;
  for (auto k : idx) ks.push_back(summary.time_index(law_times[k]));

  // Bins are right-closed, matching estimate_jump_measure.
  const double t_cut = t;
  auto cell_of = [&](const HybridState& x) { return part.try_locate(x.q, x.z); };
  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t i = 0; i < summary.n_paths; ++i) {
    double val = 0.0;
    bool valid = true;
    std::vector<double> lvals(ks.size(), 0.0);
    for (std::size_t j = 0; j < ks.size(); ++j) {
      if (!summary.observed_valid(i, ks[j])) {
        valid = false;
        break;
      }
      if (auto c = cell_of(summary.observed(i, ks[j]))) lvals[j] = v.lphi[*c];
    }
    if (!valid) continue;
    auto phi_at = [&](std::size_t k) {
      auto c = cell_of(summary.observed(i, k));
      return c ? v.phi[*c] : 0.0;
    };
    val = phi_at(ks.back()) - phi_at(ks.front());
    for (std::size_t j = 0; j + 1 < ks.size(); ++j) {
      const double h = law_times[idx[j + 1]] - law_times[idx[j]];
      val -= 0.5 * h * (lvals[j] + lvals[j + 1]);
    }
    for (std::size_t r = summary.jump_offsets[i]; r < summary.jump_offsets[i + 1]; ++r) {
      const auto& jr = summary.jumps[r];
      if (jr.time > t_cut && !same_time(jr.time, t_cut)) break;
      if (auto c = cell_of(jr.pre)) val -= v.jump[*c];
    }
    sum += val;
    sum_sq += val * val;
  }
  const double n = static_cast<double>(summary.n_paths);
  const double mean = sum / n;
  const double var = std::max(0.0, sum_sq / n - mean * mean);
  return std::sqrt(var / n);
}

// ---------------------------------------------------------------- weak FPK

std::vector<double> law_derivative(const GridDensity& prev, const GridDensity& next) {
  require_same(*prev.partition, *next.partition);
  const double h = next.t - prev.t;
  if (!(h > 0.0)) throw Error("law derivative needs increasing times");
  const auto a = prev.masses();
  const auto b = next.masses();
  std::vector<double> d(a.size());
  for (std::size_t c = 0; c < a.size(); ++c) d[c] = (b[c] - a[c]) / h;
  return d;
}

std::vector<double> law_derivative(const EmpiricalLaw& law, std::size_t k) {
  if (k == 0 || k + 1 >= law.times.size()) throw Error("central difference needs neighbouring times");
  const double h = law.times[k + 1] - law.times[k - 1];
  const auto a = law.masses(k - 1);
  const auto b = law.masses(k + 1);
  std::vector<double> d(a.size());
  for (std::size_t c = 0; c < a.size(); ++c) d[c] = (b[c] - a[c]) / h;
  return d;
}

Theorem4Report theorem4_check(std::span<const double> law_derivative, std::span<const double> lstar_measure,
                              const IntensityEstimate& intensity, std::size_t bin) {
  const std::size_t n = intensity.partition->size();
  if (law_derivative.size() != n || lstar_measure.size() != n || bin >= intensity.n_bins)
    throw Error("mismatched partitions");
  Theorem4Report rep;
  rep.residual.resize(n);
  for (std::size_t c = 0; c < n; ++c) {
    const double jump = intensity.source_at(bin, c) - intensity.sink_at(bin, c);
    rep.residual[c] = law_derivative[c] - lstar_measure[c] - jump;
    rep.max_abs = std::max(rep.max_abs, std::abs(rep.residual[c]));
    rep.l1 += std::abs(rep.residual[c]);
  }
  return rep;
}

double l1_distance(std::span<const double> a, std::span<const double> b, const Partition& partition, int q) {
  if (a.size() != partition.size() || b.size() != partition.size()) throw Error("mismatched partitions");
  std::size_t first = 0, last = partition.size();
  if (q >= 0) {
    first = partition.offset(q);
    last = first + partition.mode_cells(q);
  }
  double acc = 0.0;
  for (std::size_t c = first; c < last; ++c) acc += std::abs(a[c] - b[c]);
  return acc;
}

std::vector<double> mode_marginals(const Partition& partition, std::span<const double> masses) {
  std::vector<double> m(partition.mode_count(), 0.0);
  for (std::size_t c = 0; c < partition.size(); ++c) m[static_cast<std::size_t>(partition.mode_of(c))] += masses[c];
  return m;
}

}  // namespace gshs
