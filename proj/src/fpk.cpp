#include "gshs/fpk.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <sstream>
#include <variant>

namespace gshs {
namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

// Bernoulli function x / (e^x - 1).
double bernoulli(double x) {
  if (std::abs(x) < 1e-10) return 1.0 - 0.5 * x;
  return x / std::expm1(x);
}

// Sparse row builder keeping columns sorted.
class RowBuilder {
 public:
  explicit RowBuilder(std::size_t rows) : rows_(rows) {}
  void add(std::size_t row, std::size_t col, double v) {
    if (v != 0.0) rows_[row][col] += v;
  }
  void add_row(std::size_t row, const std::map<std::size_t, double>& src, double factor) {
    for (const auto& [c, v] : src) add(row, c, factor * v);
  }
  const std::map<std::size_t, double>& row(std::size_t r) const { return rows_[r]; }
  SparseRows finish() const {
    SparseRows s;
    for (const auto& r : rows_) {
      for (const auto& [c, v] : r) {
        if (v == 0.0) continue;
        s.idx.push_back(c);
        s.val.push_back(v);
      }
      s.ptr.push_back(s.idx.size());
    }
    return s;
  }

 private:
  std::vector<std::map<std::size_t, double>> rows_;
};

double rate_at(const GshsModel& model, int q, std::span<const double> z) {
  return model.rate ? model.rate(q, z) : 0.0;
}

// Neighbour of a cell along an axis inside the same mode, if any.
std::optional<std::size_t> neighbour(const Partition& part, int q, std::vector<std::size_t> idx, std::size_t axis,
                                     int step) {
  const auto& g = part.grid(q);
  if (step < 0 && idx[axis] == 0) return std::nullopt;
  if (step > 0 && idx[axis] + 1 >= g.cells[axis]) return std::nullopt;
  idx[axis] = static_cast<std::size_t>(static_cast<long>(idx[axis]) + step);
  return part.linear_index(q, idx);
}

double face_area(const Partition& part, int q, std::size_t axis) {
  double area = 1.0;
  for (std::size_t b = 0; b < part.dim(q); ++b)
    if (b != axis) area *= part.spacing(q, b);
  return area;
}

std::vector<double> snapshot_grid(const SolveOptions& opt) {
  if (!(opt.t_end > 0.0)) throw Error("t_end must be positive");
  std::vector<double> t{0.0, opt.t_end};
  for (double s : opt.snapshot_times) {
    if (!(s > 0.0 && s < opt.t_end)) throw Error("snapshot times must lie in (0, t_end)");
    t.push_back(s);
  }
  std::sort(t.begin(), t.end());
  t.erase(std::unique(t.begin(), t.end(), [](double a, double b) { return std::abs(a - b) < 1e-12; }), t.end());
  return t;
}

// Drives `step(p, h)` from snapshot to snapshot with equal substeps per interval.
template <class Step>
SolveResult march(const GridDensity& p0, const SolveOptions& opt, double bound, double auto_dt, Step&& step) {
  if (opt.dt > 0.0 && opt.dt > bound * (1.0 + 1e-12)) throw StabilityError(opt.dt, bound);
  if (opt.dt < 0.0) throw Error("dt must be positive");
  const double target = opt.dt > 0.0 ? opt.dt : auto_dt;
  const auto times = snapshot_grid(opt);
  SolveResult res;
  res.bound = bound;
  std::vector<double> p = p0.p;
  auto store = [&](double t) {
    GridDensity g{p0.partition, p, t};
    res.mass.push_back(g.mass());
    res.snapshots.push_back(std::move(g));
  };
  store(0.0);
  for (std::size_t i = 0; i + 1 < times.size(); ++i) {
    const double len = times[i + 1] - times[i];
    const auto n = static_cast<std::size_t>(std::max(1.0, std::ceil(len / target - 1e-9)));
    const double h = len / static_cast<double>(n);
    res.dt = std::max(res.dt, h);
    for (std::size_t k = 0; k < n; ++k) {
      step(p, h, times[i] + static_cast<double>(k + 1) * h);
      ++res.steps;
      for (std::size_t c = 0; c < p.size(); ++c)
        if (p[c] < -1e-12) {
          std::ostringstream os;
          os << "negative density " << p[c] << " in cell " << c << " at t = " << times[i] + static_cast<double>(k + 1) * h;
          throw Error(os.str());
        }
    }
    store(times[i + 1]);
  }
  return res;
}

// Heun step of dp/dt = rhs(p).
template <class Rhs>
void heun(std::vector<double>& p, double h, Rhs&& rhs, std::vector<double>& k1, std::vector<double>& p1,
          std::vector<double>& k2) {
  rhs(p, k1);
  for (std::size_t c = 0; c < p.size(); ++c) p1[c] = p[c] + h * k1[c];
  rhs(p1, k2);
  for (std::size_t c = 0; c < p.size(); ++c) p[c] = 0.5 * (p[c] + (p1[c] + h * k2[c]));
}

void check_density(const GridDensity& p0) {
  if (!p0.partition) throw Error("density has no partition");
  if (p0.p.size() != p0.partition->size()) throw Error("density size does not match its partition");
}

void check_grid_modes(const GshsModel& model, const Partition& part) {
  if (part.mode_count() != model.modes.size()) throw Error("partition and model have different mode counts");
  for (std::size_t q = 0; q < model.modes.size(); ++q)
    if (part.dim(static_cast<int>(q)) != model.modes[q].dim)
      throw Error("partition dimension differs from mode " + std::to_string(q));
}

}  // namespace

StabilityError::StabilityError(double dt, double bound)
    : Error([&] {
        std::ostringstream os;
        os.precision(6);
        os << "dt = " << dt << " exceeds the stability bound " << bound << "; suggested dt = " << 0.9 * bound;
        return os.str();
      }()),
      bound_(bound) {}

double SparseRows::at(std::size_t row, std::size_t col) const {
  for (std::size_t k = ptr[row]; k < ptr[row + 1]; ++k)
    if (idx[k] == col) return val[k];
  return 0.0;
}

void SparseRows::multiply(std::span<const double> x, std::span<double> out) const {
  const auto n = static_cast<long>(rows());
#pragma omp parallel for schedule(static)
  for (long r = 0; r < n; ++r) {
    double acc = 0.0;
    for (std::size_t k = ptr[static_cast<std::size_t>(r)]; k < ptr[static_cast<std::size_t>(r) + 1]; ++k)
      acc += val[k] * x[idx[k]];
    out[static_cast<std::size_t>(r)] = acc;
  }
}

void SparseRows::multiply_serial(std::span<const double> x, std::span<double> out) const {
  for (std::size_t r = 0; r < rows(); ++r) {
    double acc = 0.0;
    for (std::size_t k = ptr[r]; k < ptr[r + 1]; ++k) acc += val[k] * x[idx[k]];
    out[r] = acc;
  }
}

// ---------------------------------------------------------------- transport

TransportOperator build_transport(const GshsModel& model, std::shared_ptr<const Partition> partition,
                                  std::span<const BoundaryFace> absorbing) {
  const auto& part = *partition;
  check_grid_modes(model, part);
  const std::size_t md = std::max<std::size_t>(part.max_dim(), 1);
  RowBuilder faces(part.size() * md);
  TransportOperator op;
  op.partition = partition;
  op.absorbing.assign(absorbing.begin(), absorbing.end());

  std::vector<double> f(md), a(md * md), aL(md * md), aR(md * md), zf(md);
  auto diag_a = [&](int q, std::span<const double> z, std::size_t i) {
    const std::size_t n = part.dim(q);
    diffusion_entries(model, q, z, std::span<double>(a.data(), n * n));
    return a[i * n + i];
  };

  for (std::size_t c = 0; c < part.size(); ++c) {
    const int q = part.mode_of(c);
    const std::size_t n = part.dim(q);
    if (n == 0) continue;
    const auto idx = part.multi_index(c);
    const auto zc = part.center(c);
    for (std::size_t ax = 0; ax < n; ++ax) {
      const auto right = neighbour(part, q, idx, ax, +1);
      if (!right) continue;
      const double h = part.spacing(q, ax);
      const auto zr = part.center(*right);
      for (std::size_t b = 0; b < n; ++b) zf[b] = zc[b];
      zf[ax] = 0.5 * (zc[ax] + zr[ax]);
      const std::span<const double> zfs(zf.data(), n);
      model.drift(q, zfs, std::span<double>(f.data(), n));
      diffusion_entries(model, q, zfs, std::span<double>(a.data(), n * n));
      const double a_face = a[ax * n + ax];
      std::vector<double> af(a.begin(), a.begin() + static_cast<std::ptrdiff_t>(n * n));
      const double a_l = diag_a(q, zc, ax);
      const double a_r = diag_a(q, zr, ax);
      const std::size_t row = c * md + ax;

      // Normal part: j = f p - 1/2 d(a p)/dz with a frozen at the face and
      // its gradient moved into the drift.
      const double f_eff = f[ax] - 0.5 * (a_r - a_l) / h;
      const double peclet = a_face > 0.0 ? 2.0 * f_eff * h / a_face : kInf;
      if (a_face > 1e-300 && std::abs(peclet) < 600.0) {
        faces.add(row, c, a_face / (2.0 * h) * bernoulli(-peclet));
        faces.add(row, *right, -a_face / (2.0 * h) * bernoulli(peclet));
      } else {
        faces.add(row, c, std::max(f[ax], 0.0));
        faces.add(row, *right, std::min(f[ax], 0.0));
      }

      // Cross terms -1/2 d(a_ab p)/dz_b, averaged over the two cells.
      for (std::size_t bx = 0; bx < n; ++bx) {
        if (bx == ax || af[ax * n + bx] == 0.0) continue;
        const double hb = part.spacing(q, bx);
        for (std::size_t side : {c, *right}) {
          const auto sidx = part.multi_index(side);
          const auto up = neighbour(part, q, sidx, bx, +1);
          const auto dn = neighbour(part, q, sidx, bx, -1);
          const std::size_t cu = up ? *up : side;
          const std::size_t cd = dn ? *dn : side;
          const double dist = hb * ((up ? 1.0 : 0.0) + (dn ? 1.0 : 0.0));
          if (dist == 0.0) continue;
          auto a_ab = [&](std::size_t cell) {
            const auto z = part.center(cell);
            diffusion_entries(model, q, z, std::span<double>(aL.data(), n * n));
            return aL[ax * n + bx];
          };
          faces.add(row, cu, -0.25 * a_ab(cu) / dist);
          faces.add(row, cd, 0.25 * a_ab(cd) / dist);
        }
      }
    }
  }

  // L* p = -(sum over axes of flux differences) / h.
  RowBuilder lstar(part.size());
  for (std::size_t c = 0; c < part.size(); ++c) {
    const int q = part.mode_of(c);
    const std::size_t n = part.dim(q);
    if (n == 0) continue;
    const auto idx = part.multi_index(c);
    for (std::size_t ax = 0; ax < n; ++ax) {
      const double h = part.spacing(q, ax);
      lstar.add_row(c, faces.row(c * md + ax), -1.0 / h);
      if (auto left = neighbour(part, q, idx, ax, -1)) lstar.add_row(c, faces.row(*left * md + ax), 1.0 / h);
    }
  }

  // Absorbing faces: p = 0 on the face, flux over half a cell.
  for (std::size_t fi = 0; fi < op.absorbing.size(); ++fi) {
    const auto& bf = op.absorbing[fi];
    const auto& g = part.grid(bf.mode);
    if (bf.axis >= g.dim()) throw Error("absorbing face axis out of range");
    const std::size_t n = g.dim();
    const double h = part.spacing(bf.mode, bf.axis);
    const double area = face_area(part, bf.mode, bf.axis);
    for (std::size_t c = part.offset(bf.mode); c < part.offset(bf.mode) + part.mode_cells(bf.mode); ++c) {
      const auto idx = part.multi_index(c);
      const bool on_face = bf.side == Side::lower ? idx[bf.axis] == 0 : idx[bf.axis] + 1 == g.cells[bf.axis];
      if (!on_face) continue;
      const auto zc = part.center(c);
      for (std::size_t b = 0; b < n; ++b) zf[b] = zc[b];
      zf[bf.axis] = bf.side == Side::lower ? g.truncation[bf.axis].lo : g.truncation[bf.axis].hi;
      const std::span<const double> zfs(zf.data(), n);
      model.drift(bf.mode, zfs, std::span<double>(f.data(), n));
      const double a_face = diag_a(bf.mode, zfs, bf.axis);
      const double a_c = diag_a(bf.mode, zc, bf.axis);
      const double half = 0.5 * h;
      double out;
      if (bf.side == Side::lower) {
        const double f_eff = f[bf.axis] - 0.5 * (a_c - a_face) / half;
        const double peclet = a_face > 0.0 ? 2.0 * f_eff * half / a_face : kInf;
        out = a_face > 1e-300 && std::abs(peclet) < 600.0 ? a_face / (2.0 * half) * bernoulli(peclet)
                                                          : std::max(-f[bf.axis], 0.0);
      } else {
        const double f_eff = f[bf.axis] - 0.5 * (a_face - a_c) / half;
        const double peclet = a_face > 0.0 ? 2.0 * f_eff * half / a_face : kInf;
        out = a_face > 1e-300 && std::abs(peclet) < 600.0 ? a_face / (2.0 * half) * bernoulli(-peclet)
                                                          : std::max(f[bf.axis], 0.0);
        faces.add(c * md + bf.axis, c, out);
      }
      const double coef = out * area;
      op.outflow.push_back({fi, c, coef});
      lstar.add(c, c, -coef / part.cell_volume(c));
    }
  }

  op.faces = faces.finish();
  op.lstar = lstar.finish();
  return op;
}

void apply_lstar(const TransportOperator& op, std::span<const double> p, std::span<double> out) {
  op.lstar.multiply(p, out);
}

void apply_lstar_serial(const TransportOperator& op, std::span<const double> p, std::span<double> out) {
  op.lstar.multiply_serial(p, out);
}

std::vector<double> apply_lstar(const GshsModel& model, const GridDensity& p) {
  check_density(p);
  const auto op = build_transport(model, p.partition);
  std::vector<double> out(p.p.size());
  apply_lstar(op, p.p, out);
  return out;
}

CurrentField probability_current(const GshsModel& model, const GridDensity& p) {
  check_density(p);
  const auto& part = *p.partition;
  const auto op = build_transport(model, p.partition);
  const std::size_t md = std::max<std::size_t>(part.max_dim(), 1);
  CurrentField j;
  j.partition = p.partition;
  j.face.assign(part.size() * md, 0.0);
  op.faces.multiply_serial(p.p, j.face);
  j.cell.assign(part.size() * md, 0.0);
  std::vector<double> f(md), a(md * md);
  for (std::size_t c = 0; c < part.size(); ++c) {
    const int q = part.mode_of(c);
    const std::size_t n = part.dim(q);
    if (n == 0) continue;
    const auto zc = part.center(c);
    model.drift(q, zc, std::span<double>(f.data(), n));
    const auto idx = part.multi_index(c);
    auto ap = [&](std::size_t cell, std::size_t i, std::size_t k) {
      diffusion_entries(model, q, part.center(cell), std::span<double>(a.data(), n * n));
      return a[i * n + k] * p.p[cell];
    };
    for (std::size_t i = 0; i < n; ++i) {
      double v = f[i] * p.p[c];
      for (std::size_t k = 0; k < n; ++k) {
        const auto up = neighbour(part, q, idx, k, +1);
        const auto dn = neighbour(part, q, idx, k, -1);
        const double dist = part.spacing(q, k) * ((up ? 1.0 : 0.0) + (dn ? 1.0 : 0.0));
        if (dist == 0.0) continue;
        v -= 0.5 * (ap(up ? *up : c, i, k) - ap(dn ? *dn : c, i, k)) / dist;
      }
      j.cell[c * md + i] = v;
    }
  }
  return j;
}

double stability_bound(const TransportOperator& op, std::span<const double> rate) {
  double worst = 0.0;
  for (std::size_t c = 0; c < op.lstar.rows(); ++c) {
    const double lam = rate.empty() ? 0.0 : rate[c];
    worst = std::max(worst, -op.lstar.at(c, c) + 2.0 * lam);
  }
  return worst > 0.0 ? 1.0 / worst : kInf;
}

// ---------------------------------------------------------------- jumps

JumpTransfer build_jump_transfer(const GshsModel& model, std::shared_ptr<const Partition> partition, int subsamples) {
  const auto& part = *partition;
  check_grid_modes(model, part);
  if (subsamples < 1) throw Error("subsamples must be at least 1");
  JumpTransfer tr;
  tr.partition = partition;
  tr.rate.resize(part.size());
  tr.lost.assign(part.size(), 0.0);
  std::map<std::pair<std::size_t, std::size_t>, double> w;  // (to, from)

  // Sub-cell midpoints of a cell (the atom itself on discrete modes).
  auto sample_points = [&](std::size_t c) {
    const int q = part.mode_of(c);
    const std::size_t n = part.dim(q);
    std::vector<HybridState> pts;
    if (n == 0) {
      pts.push_back({q, {}});
      return pts;
    }
    const auto zc = part.center(c);
    std::size_t total = 1;
    for (std::size_t a = 0; a < n; ++a) total *= static_cast<std::size_t>(subsamples);
    for (std::size_t k = 0; k < total; ++k) {
      HybridState y{q, zc};
      std::size_t rem = k;
      for (std::size_t a = 0; a < n; ++a) {
        const auto s = rem % static_cast<std::size_t>(subsamples);
        rem /= static_cast<std::size_t>(subsamples);
        const double h = part.spacing(q, a);
        y.z[a] = zc[a] - 0.5 * h + (static_cast<double>(s) + 0.5) * h / subsamples;
      }
      pts.push_back(std::move(y));
    }
    return pts;
  };

  for (std::size_t c = 0; c < part.size(); ++c) {
    const HybridState x{part.mode_of(c), part.center(c)};
    tr.rate[c] = rate_at(model, x.q, x.z);
    auto land = [&](const HybridState& y, double weight) {
      if (weight == 0.0) return;
      if (auto to = part.try_locate(y.q, y.z)) {
        w[{*to, c}] += weight;
      } else {
        tr.lost[c] += weight;
      }
    };
    std::visit(Overloaded{[&](const DeterministicMap& d) {
                            const auto pts = sample_points(c);
                            const double each = 1.0 / static_cast<double>(pts.size());
                            for (const auto& y : pts) land(d.map(y), each);
                          },
                          [&](const MapMixture& mix) {
                            const auto pts = sample_points(c);
                            const double each = 1.0 / static_cast<double>(pts.size());
                            for (const auto& y : pts)
                              for (const auto& b : mix.branches) land(b.map.map(y), each * b.weight(y));
                          },
                          [&](const DensityKernel& dk) {
                            std::vector<double> row(part.size());
                            double total = 0.0;
                            for (std::size_t t = 0; t < part.size(); ++t) {
                              const HybridState y{part.mode_of(t), part.center(t)};
                              row[t] = dk.density(x, y) * part.cell_volume(t);
                              total += row[t];
                            }
                            if (total <= 0.0) return;
                            for (std::size_t t = 0; t < part.size(); ++t)
                              if (row[t] > 0.0) w[{t, c}] += row[t] / total;
                          },
                          [&](const ModeSwitch& sw) {
                            const auto idx = part.multi_index(c);
                            for (std::size_t t = 0; t < model.modes.size(); ++t) {
                              const int to_mode = static_cast<int>(t);
                              if (to_mode == x.q) continue;
                              const double pi = sw.pi(x.q, to_mode, x.z);
                              if (pi == 0.0) continue;
                              const auto& ga = part.grid(x.q);
                              const auto& gb = part.grid(to_mode);
                              if (ga.cells != gb.cells) throw Unsupported("mode switch needs identical per-mode grids");
                              for (std::size_t a = 0; a < ga.dim(); ++a)
                                if (ga.truncation[a].lo != gb.truncation[a].lo || ga.truncation[a].hi != gb.truncation[a].hi)
                                  throw Unsupported("mode switch needs identical per-mode grids");
                              w[{part.linear_index(to_mode, idx), c}] += pi;
                            }
                          }},
               model.reset);
  }
  tr.entries.reserve(w.size());
  for (const auto& [key, weight] : w) tr.entries.push_back({key.second, key.first, weight});
  return tr;
}

void jump_source(const JumpTransfer& tr, std::span<const double> p, std::span<double> out) {
  const auto& part = *tr.partition;
  std::fill(out.begin(), out.end(), 0.0);
  for (const auto& e : tr.entries) {
    const double ratio = part.cell_volume(e.from) / part.cell_volume(e.to);
    out[e.to] += e.weight * tr.rate[e.from] * p[e.from] * ratio;
  }
}

// ---------------------------------------------------------------- master equation

RateOperator RateOperator::from_model(const GshsModel& model, std::shared_ptr<const Partition> partition) {
  const auto tr = build_jump_transfer(model, partition);
  RateOperator op;
  op.partition = partition;
  op.out_rate.assign(partition->size(), 0.0);
  for (const auto& e : tr.entries) {
    if (e.from == e.to) continue;
    const double r = e.weight * tr.rate[e.from];
    if (r == 0.0) continue;
    op.entries.push_back({e.from, e.to, r});
    op.out_rate[e.from] += r;
  }
  return op;
}

RateOperator RateOperator::from_generator(const Eigen::MatrixXd& q, std::shared_ptr<const Partition> partition) {
  const auto n = static_cast<Eigen::Index>(partition->size());
  if (q.rows() != n || q.cols() != n) throw Error("generator size does not match the partition");
  RateOperator op;
  op.partition = partition;
  op.out_rate.assign(partition->size(), 0.0);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i == j) continue;
      if (q(i, j) < 0.0) throw Error("generator has a negative off-diagonal rate");
      if (q(i, j) == 0.0) continue;
      op.entries.push_back({static_cast<std::size_t>(i), static_cast<std::size_t>(j), q(i, j)});
      op.out_rate[static_cast<std::size_t>(i)] += q(i, j);
    }
  return op;
}

SolveResult solve_master_equation(const RateOperator& gamma, const GridDensity& p0, const SolveOptions& options) {
  check_density(p0);
  if (!(*gamma.partition == *p0.partition)) throw Error("mismatched partitions");
  const auto& part = *p0.partition;
  const double max_out = gamma.out_rate.empty() ? 0.0 : *std::max_element(gamma.out_rate.begin(), gamma.out_rate.end());
  const double bound = max_out > 0.0 ? 1.0 / (2.0 * max_out) : kInf;
  std::vector<double> vol(part.size());
  for (std::size_t c = 0; c < part.size(); ++c) vol[c] = part.cell_volume(c);

  auto rhs = [&](const std::vector<double>& p, std::vector<double>& out) {
    for (std::size_t c = 0; c < p.size(); ++c) out[c] = -gamma.out_rate[c] * p[c];
    for (const auto& e : gamma.entries) out[e.to] += e.rate * p[e.from] * (vol[e.from] / vol[e.to]);
  };
  const std::size_t n = part.size();
  std::vector<double> k1(n), k2(n), k3(n), k4(n), tmp(n);
  return march(p0, options, bound, std::min(1e-3, 0.9 * bound), [&](std::vector<double>& p, double h, double) {
    rhs(p, k1);
    for (std::size_t c = 0; c < n; ++c) tmp[c] = p[c] + 0.5 * h * k1[c];
    rhs(tmp, k2);
    for (std::size_t c = 0; c < n; ++c) tmp[c] = p[c] + 0.5 * h * k2[c];
    rhs(tmp, k3);
    for (std::size_t c = 0; c < n; ++c) tmp[c] = p[c] + h * k3[c];
    rhs(tmp, k4);
    for (std::size_t c = 0; c < n; ++c) p[c] += h / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
  });
}

// ---------------------------------------------------------------- spontaneous / switching

namespace {

template <class JumpRhs>
SolveResult strang_solve(const GshsModel& model, const GridDensity& p0, const SolveOptions& options,
                         const std::vector<double>& rate, JumpRhs&& jump_rhs) {
  const auto op = build_transport(model, p0.partition);
  const double bound = stability_bound(op, rate);
  const std::size_t n = p0.p.size();
  std::vector<double> k1(n), p1(n), k2(n);
  auto transport = [&](const std::vector<double>& p, std::vector<double>& out) { apply_lstar(op, p, out); };
  return march(p0, options, bound, std::min(1e-3, 0.9 * bound), [&](std::vector<double>& p, double h, double) {
    heun(p, 0.5 * h, jump_rhs, k1, p1, k2);
    heun(p, h, transport, k1, p1, k2);
    heun(p, 0.5 * h, jump_rhs, k1, p1, k2);
  });
}

}  // namespace

SolveResult solve_spontaneous_fpk(const GshsModel& model, const GridDensity& p0, const SolveOptions& options) {
  check_density(p0);
  if (model.has_guard()) throw Unsupported("spontaneous FPK solver needs a model without guard");
  const auto tr = build_jump_transfer(model, p0.partition);
  std::vector<double> src(p0.p.size());
  auto jump_rhs = [&](const std::vector<double>& p, std::vector<double>& out) {
    jump_source(tr, p, src);
    for (std::size_t c = 0; c < p.size(); ++c) out[c] = src[c] - tr.rate[c] * p[c];
  };
  return strang_solve(model, p0, options, tr.rate, jump_rhs);
}

SolveResult solve_switching_fpk(const GshsModel& model, const GridDensity& p0, const SolveOptions& options) {
  check_density(p0);
  const auto* sw = std::get_if<ModeSwitch>(&model.reset);
  if (!sw) throw Unsupported("switching solver needs a mode-switch reset kernel");
  if (model.has_guard()) throw Unsupported("switching solver needs a model without guard");
  const auto& part = *p0.partition;
  check_grid_modes(model, part);
  const std::size_t modes = part.mode_count();
  const std::size_t per_mode = part.mode_cells(0);
  for (std::size_t q = 1; q < modes; ++q)
    if (part.grid(static_cast<int>(q)).cells != part.grid(0).cells) throw Unsupported("switching solver needs identical per-mode grids");

  // lambda(q, z_c) and pi_{q q'}(z_c) at every local cell.
  std::vector<double> rate(part.size());
  std::vector<double> pi(modes * modes * per_mode, 0.0);
  for (std::size_t c = 0; c < part.size(); ++c) {
    const int q = part.mode_of(c);
    const auto z = part.center(c);
    rate[c] = rate_at(model, q, z);
    const std::size_t local = c - part.offset(q);
    for (std::size_t t = 0; t < modes; ++t)
      if (static_cast<int>(t) != q) pi[(static_cast<std::size_t>(q) * modes + t) * per_mode + local] = sw->pi(q, static_cast<int>(t), z);
  }
  auto jump_rhs = [&](const std::vector<double>& p, std::vector<double>& out) {
    for (std::size_t q = 0; q < modes; ++q)
      for (std::size_t l = 0; l < per_mode; ++l) {
        const std::size_t c = q * per_mode + l;
        double in = 0.0;
        for (std::size_t s = 0; s < modes; ++s) {
          if (s == q) continue;
          const std::size_t cs = s * per_mode + l;
          in += pi[(s * modes + q) * per_mode + l] * rate[cs] * p[cs];
        }
        out[c] = in - rate[c] * p[c];
      }
  };
  return strang_solve(model, p0, options, rate, jump_rhs);
}

// ---------------------------------------------------------------- thermostat

namespace {

struct ThermostatGeometry {
  double z_min = 0.0, z_max = 0.0;
  std::vector<BoundaryFace> guards;
  // Cells receiving the flux of each guard face.
  std::vector<std::array<std::size_t, 2>> targets;
};

bool on_face(double z, const Interval& trunc, double h) {
  const double u = (z - trunc.lo) / h;
  return std::abs(u - std::round(u)) < 1e-9 && z > trunc.lo && z < trunc.hi;
}

ThermostatGeometry thermostat_geometry(const GshsModel& model, const Partition& part) {
  auto fail = [](const std::string& why) { return Unsupported("model does not match the thermostat template: " + why); };
  if (model.modes.size() != 2 || model.modes[0].dim != 1 || model.modes[1].dim != 1) throw fail("two one-dimensional modes required");
  for (double b : model.rate_bound)
    if (b != 0.0) throw fail("spontaneous jumps must be absent");
  const auto& m0 = model.modes[0];
  const auto& m1 = model.modes[1];
  if (m0.guard_faces.size() != 1 || m0.guard_faces[0].side != Side::lower || !std::isfinite(m0.box[0].lo) ||
      std::isfinite(m0.box[0].hi))
    throw fail("mode 0 must be [z_min, inf) with its lower end as guard");
  if (m1.guard_faces.size() != 1 || m1.guard_faces[0].side != Side::upper || !std::isfinite(m1.box[0].hi) ||
      std::isfinite(m1.box[0].lo))
    throw fail("mode 1 must be (-inf, z_max] with its upper end as guard");
  const auto* map = std::get_if<DeterministicMap>(&model.reset);
  if (!map) throw fail("deterministic reset required");
  ThermostatGeometry g;
  g.z_min = m0.box[0].lo;
  g.z_max = m1.box[0].hi;
  if (!(g.z_min < g.z_max)) throw fail("z_min must be below z_max");
  if (map->map(HybridState{0, {g.z_min}}) != HybridState{1, {g.z_min}} ||
      map->map(HybridState{1, {g.z_max}}) != HybridState{0, {g.z_max}})
    throw fail("reset must be (q, z) -> (1 - q, z)");
  if (part.mode_count() != 2 || part.dim(0) != 1 || part.dim(1) != 1) throw fail("partition must have two 1-D modes");
  const auto& t0 = part.grid(0).truncation[0];
  const auto& t1 = part.grid(1).truncation[0];
  if (std::abs(t0.lo - g.z_min) > 1e-12 || std::abs(t1.hi - g.z_max) > 1e-12)
    throw fail("grids must start at the guard faces");
  if (!on_face(g.z_max, t0, part.spacing(0, 0)) || !on_face(g.z_min, t1, part.spacing(1, 0)))
    throw fail("jump images must lie on interior cell faces");
  std::vector<double> a(1);
  diffusion_entries(model, 0, std::vector<double>{g.z_min}, a);
  const double a0 = a[0];
  diffusion_entries(model, 1, std::vector<double>{g.z_max}, a);
  if (!(a0 > 0.0 && a[0] > 0.0)) throw fail("noise must be transverse to the guard");

  g.guards = {{0, 0, Side::lower}, {1, 0, Side::upper}};
  auto cells_at = [&](int q, double z) {
    const auto& tr = part.grid(q).truncation[0];
    const auto k = static_cast<std::size_t>(std::llround((z - tr.lo) / part.spacing(q, 0)));
    return std::array<std::size_t, 2>{part.offset(q) + k - 1, part.offset(q) + k};
  };
  g.targets = {cells_at(1, g.z_min), cells_at(0, g.z_max)};
  return g;
}

}  // namespace

ThermostatResult solve_forced_thermostat(const GshsModel& model, const GridDensity& p0, const SolveOptions& options) {
  check_density(p0);
  const auto& part = *p0.partition;
  const auto geo = thermostat_geometry(model, part);
  const auto op = build_transport(model, p0.partition, geo.guards);
  const double bound = stability_bound(op, {});
  const std::size_t n = part.size();
  const std::size_t faces = geo.guards.size();

  ThermostatResult res;
  res.guard_faces = geo.guards;
  std::vector<double> j1(faces), j2(faces), s1(n), s2(n);
  std::vector<double> k1(n), p1(n), k2(n);

  auto outflow = [&](const std::vector<double>& p, std::vector<double>& j) {
    std::fill(j.begin(), j.end(), 0.0);
    for (const auto& o : op.outflow) {
      const double v = o.coef * p[o.cell];
      if (v < 0.0) {
        ++res.clipped;
        continue;
      }
      j[o.face] += v;
    }
  };
  auto injection = [&](const std::vector<double>& j, std::vector<double>& s) {
    std::fill(s.begin(), s.end(), 0.0);
    for (std::size_t f = 0; f < faces; ++f)
      for (std::size_t t : geo.targets[f]) s[t] += 0.5 * j[f] / part.cell_volume(t);
  };

  auto step = [&](std::vector<double>& p, double h, double t_end) {
    outflow(p, j1);
    injection(j1, s1);
    apply_lstar(op, p, k1);
    for (std::size_t c = 0; c < n; ++c) p1[c] = p[c] + h * (k1[c] + s1[c]);
    outflow(p1, j2);
    injection(j2, s2);
    apply_lstar(op, p1, k2);
    for (std::size_t c = 0; c < n; ++c) p[c] = 0.5 * (p[c] + (p1[c] + h * (k2[c] + s2[c])));

    double extracted = 0.0, injected = 0.0;
    for (std::size_t f = 0; f < faces; ++f) {
      const double jf = 0.5 * (j1[f] + j2[f]);
      res.flux.push_back({t_end, f, jf});
      extracted += h * jf;
    }
    for (std::size_t c = 0; c < n; ++c)
      if (s1[c] != 0.0 || s2[c] != 0.0) injected += h * 0.5 * (s1[c] + s2[c]) * part.cell_volume(c);
    res.extracted.push_back(extracted);
    res.injected.push_back(injected);
  };
  res.solution = march(p0, options, bound, std::min(1e-3, 0.9 * bound), step);

  for (const auto& snap : res.solution.snapshots) {
    for (std::size_t f = 0; f < faces; ++f) {
      const auto& bf = geo.guards[f];
      const std::size_t first = bf.side == Side::lower ? part.offset(bf.mode) : part.offset(bf.mode) + part.mode_cells(bf.mode) - 1;
      const std::size_t second = bf.side == Side::lower ? first + 1 : first - 1;
      res.guard_values.push_back(0.0);
      res.guard_extrapolated.push_back(1.5 * snap.p[first] - 0.5 * snap.p[second]);
    }
  }
  return res;
}

// ---------------------------------------------------------------- solver-side intensities

namespace {

IntensityEstimate single_bin(std::shared_ptr<const Partition> partition) {
  IntensityEstimate est;
  est.partition = std::move(partition);
  est.n_bins = 1;
  est.scale = {1.0};
  const std::size_t slots = est.slots();
  est.sink.assign(slots, 0.0);
  est.source.assign(slots, 0.0);
  est.sink_spont.assign(slots, 0.0);
  est.sink_forced.assign(slots, 0.0);
  est.pairs.resize(1);
  return est;
}

}  // namespace

IntensityEstimate spontaneous_intensity(const GshsModel& model, const GridDensity& p) {
  check_density(p);
  const auto& part = *p.partition;
  const auto tr = build_jump_transfer(model, p.partition);
  auto est = single_bin(p.partition);
  for (std::size_t c = 0; c < part.size(); ++c) {
    const double m = tr.rate[c] * p.p[c] * part.cell_volume(c);
    est.sink[c] = m;
    est.sink_spont[c] = m;
    est.source[est.outside_slot()] += tr.lost[c] * m;
  }
  for (const auto& e : tr.entries) {
    const double m = e.weight * tr.rate[e.from] * p.p[e.from] * part.cell_volume(e.from);
    est.source[e.to] += m;
    if (m != 0.0) est.pairs[0].push_back({e.from, e.to, m});
  }
  return est;
}

IntensityEstimate master_intensity(const RateOperator& gamma, const GridDensity& p) {
  check_density(p);
  const auto& part = *p.partition;
  auto est = single_bin(p.partition);
  for (std::size_t c = 0; c < part.size(); ++c) {
    est.sink[c] = gamma.out_rate[c] * p.p[c] * part.cell_volume(c);
    est.sink_spont[c] = est.sink[c];
  }
  for (const auto& e : gamma.entries) {
    const double m = e.rate * p.p[e.from] * part.cell_volume(e.from);
    est.source[e.to] += m;
    if (m != 0.0) est.pairs[0].push_back({e.from, e.to, m});
  }
  return est;
}

IntensityEstimate thermostat_intensity(const GshsModel& model, const GridDensity& p) {
  check_density(p);
  const auto& part = *p.partition;
  const auto geo = thermostat_geometry(model, part);
  const auto op = build_transport(model, p.partition, geo.guards);
  auto est = single_bin(p.partition);
  for (const auto& o : op.outflow) {
    const double m = std::max(0.0, o.coef * p.p[o.cell]);
    est.sink[o.cell] += m;
    est.sink_forced[o.cell] += m;
    for (std::size_t t : geo.targets[o.face]) {
      est.source[t] += 0.5 * m;
      if (m != 0.0) est.pairs[0].push_back({o.cell, t, 0.5 * m});
    }
  }
  return est;
}

}  // namespace gshs
