#include "gshs/model.hpp"

#include <cmath>
#include <string>

namespace gshs {
namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

double uniform01(Rng& rng) { return std::generate_canonical<double, 53>(rng); }

std::string mode_path(int q) { return "modes[" + std::to_string(q) + "]"; }

// Sample point of a (possibly unbounded) interval.
double sample_axis(const Interval& iv, Rng& rng) {
  std::normal_distribution<double> n(0.0, 3.0);
  if (iv.bounded()) return iv.lo + uniform01(rng) * iv.width();
  if (iv.lo > -kInf) return iv.lo + std::abs(n(rng));
  if (iv.hi < kInf) return iv.hi - std::abs(n(rng));
  return n(rng);
}

double rate_of(const GshsModel& model, int q, std::span<const double> z) {
  return model.rate ? model.rate(q, z) : 0.0;
}

void check_post_state(const GshsModel& model, const HybridState& post, const std::string& path) {
  if (post.q < 0 || static_cast<std::size_t>(post.q) >= model.modes.size())
    throw ValidationError(path, "reset lands in unknown mode " + std::to_string(post.q));
  const auto& m = model.mode(post.q);
  if (post.z.size() != m.dim) throw ValidationError(path, "reset produces a state of the wrong dimension");
  for (std::size_t a = 0; a < m.dim; ++a)
    if (!m.box[a].contains(post.z[a])) throw ValidationError(path, "reset lands outside the state space");
  if (in_guard(m, post.z, 1e-12)) throw ValidationError(path, "reset lands in the guard set");
}

}  // namespace

bool GshsModel::has_guard() const {
  for (const auto& m : modes)
    if (!m.guard_faces.empty()) return true;
  return false;
}

bool in_guard(const GshsModel& model, const HybridState& x, double tol) {
  return in_guard(model.mode(x.q), x.z, tol);
}

void diffusion_entries(const GshsModel& model, int q, std::span<const double> z, std::span<double> out) {
  const std::size_t n = model.dim(q);
  const std::size_t r = model.noise_count;
  std::fill(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(n * n), 0.0);
  if (n == 0 || r == 0 || !model.noise) return;
  double buf[64];
  std::vector<double> heap;
  std::span<double> f;
  if (n * r <= 64) {
    f = std::span<double>(buf, n * r);
  } else {
    heap.resize(n * r);
    f = heap;
  }
  model.noise(q, z, f);
  for (std::size_t l = 0; l < r; ++l)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += f[l * n + i] * f[l * n + j];
}

Eigen::MatrixXd diffusion_matrix(const GshsModel& model, const HybridState& x) {
  const auto n = static_cast<Eigen::Index>(model.dim(x.q));
  Eigen::MatrixXd a(n, n);
  if (n == 0) return a;
  std::vector<double> e(static_cast<std::size_t>(n * n));
  diffusion_entries(model, x.q, x.z, e);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) a(i, j) = e[static_cast<std::size_t>(i * n + j)];
  return a;
}

void validate(const GshsModel& model, std::uint64_t seed) {
  if (model.modes.empty()) throw ValidationError("modes", "at least one mode is required");
  for (std::size_t q = 0; q < model.modes.size(); ++q) {
    const auto& m = model.modes[q];
    if (m.id != static_cast<int>(q)) throw ValidationError(mode_path(static_cast<int>(q)) + ".id", "mode ids must equal their index");
    validate_mode(m, mode_path(m.id));
  }
  if (model.rate_bound.size() != model.modes.size())
    throw ValidationError("rate_bound", "needs one bound per mode");
  for (std::size_t q = 0; q < model.rate_bound.size(); ++q)
    if (!(model.rate_bound[q] >= 0.0) || !std::isfinite(model.rate_bound[q]))
      throw ValidationError("rate_bound[" + std::to_string(q) + "]", "must be finite and non-negative");
  if (!model.drift) throw ValidationError("drift", "missing drift evaluator");
  if (model.noise_count > 0 && !model.noise) throw ValidationError("noise", "missing noise evaluator");

  Rng rng(seed);
  constexpr int kSamples = 64;
  for (const auto& m : model.modes) {
    const std::string path = mode_path(m.id);
    std::vector<double> z(m.dim), f0(m.dim), a(m.dim * m.dim);
    const int samples = m.discrete() ? 1 : kSamples;
    for (int s = 0; s < samples; ++s) {
      for (std::size_t i = 0; i < m.dim; ++i) z[i] = sample_axis(m.box[i], rng);
      const double lam = rate_of(model, m.id, z);
      if (!(lam >= 0.0)) throw ValidationError(path + ".rate", "jump rate must be non-negative");
      if (lam > model.rate_bound[static_cast<std::size_t>(m.id)] * (1.0 + 1e-12))
        throw ValidationError(path + ".rate", "jump rate exceeds the declared bound");
      if (m.dim > 0) {
        model.drift(m.id, z, f0);
        for (double v : f0)
          if (!std::isfinite(v)) throw ValidationError(path + ".drift", "non-finite drift");
      }
      if (m.dim > 0 && lam > 0.0 && std::holds_alternative<ModeSwitch>(model.reset)) {
        const auto& sw = std::get<ModeSwitch>(model.reset);
        double row = 0.0;
        for (std::size_t t = 0; t < model.modes.size(); ++t) {
          const double p = sw.pi(m.id, static_cast<int>(t), z);
          if (p < 0.0) throw ValidationError("reset.pi", "negative switching probability");
          if (static_cast<int>(t) == m.id && p != 0.0)
            throw ValidationError("reset.pi", "switching matrix must have a zero diagonal");
          if (p > 0.0 && model.modes[t].dim != m.dim)
            throw ValidationError("reset.pi", "mode switch between modes of different dimension");
          row += p;
        }
        if (std::abs(row - 1.0) > 1e-9) throw ValidationError("reset.pi", "rows must sum to one");
      }
    }
    if (m.discrete() && std::holds_alternative<ModeSwitch>(model.reset) &&
        model.rate_bound[static_cast<std::size_t>(m.id)] > 0.0) {
      const auto& sw = std::get<ModeSwitch>(model.reset);
      double row = 0.0;
      for (std::size_t t = 0; t < model.modes.size(); ++t) {
        const double p = sw.pi(m.id, static_cast<int>(t), {});
        if (p < 0.0) throw ValidationError("reset.pi", "negative switching probability");
        if (static_cast<int>(t) == m.id && p != 0.0)
          throw ValidationError("reset.pi", "switching matrix must have a zero diagonal");
        row += p;
      }
      if (std::abs(row - 1.0) > 1e-9) throw ValidationError("reset.pi", "rows must sum to one");
    }

    // Faces of the box: guard faces must send resets off the guard, the others
    // must see no diffusion in the normal direction.
    for (std::size_t axis = 0; axis < m.dim; ++axis) {
      for (Side side : {Side::lower, Side::upper}) {
        const double coord = side == Side::lower ? m.box[axis].lo : m.box[axis].hi;
        if (!std::isfinite(coord)) continue;
        for (int s = 0; s < 16; ++s) {
          for (std::size_t i = 0; i < m.dim; ++i) z[i] = i == axis ? coord : sample_axis(m.box[i], rng);
          const HybridState x{m.id, z};
          if (in_guard(m, z, 0.0)) {
            const std::string rpath = "reset(" + path + ")";
            std::visit(Overloaded{
                           [&](const DeterministicMap& d) { check_post_state(model, d.map(x), rpath); },
                           [&](const MapMixture& mix) {
                             double total = 0.0;
                             for (const auto& b : mix.branches) {
                               total += b.weight(x);
                               check_post_state(model, b.map.map(x), rpath);
                             }
                             if (std::abs(total - 1.0) > 1e-9)
                               throw ValidationError("reset.branches", "weights must sum to one");
                           },
                           [&](const DensityKernel&) {},
                           [&](const ModeSwitch& sw) {
                             for (std::size_t t = 0; t < model.modes.size(); ++t)
                               if (sw.pi(m.id, static_cast<int>(t), z) > 0.0)
                                 check_post_state(model, HybridState{static_cast<int>(t), z}, rpath);
                           }},
                       model.reset);
          } else {
            diffusion_entries(model, m.id, z, a);
            if (std::abs(a[axis * m.dim + axis]) > 1e-12)
              throw ValidationError(path + ".box[" + std::to_string(axis) + "]",
                                    "diffusion must vanish normal to a non-guard boundary face");
          }
        }
      }
    }
  }
  if (const auto* mix = std::get_if<MapMixture>(&model.reset)) {
    if (mix->branches.empty()) throw ValidationError("reset.branches", "mixture needs at least one branch");
  }
  if (const auto* dk = std::get_if<DensityKernel>(&model.reset)) {
    if (!dk->density) throw ValidationError("reset.density", "missing density evaluator");
  }
}

double generator_apply(const GshsModel& model, const ScalarField& phi, const HybridState& x) {
  const std::size_t n = model.dim(x.q);
  if (n == 0) return 0.0;
  if (!phi.gradient || !phi.hessian) return generator_apply_fd(model, phi, x);
  std::vector<double> f0(n), grad(n), hess(n * n), a(n * n);
  model.drift(x.q, x.z, f0);
  phi.gradient(x.q, x.z, grad);
  phi.hessian(x.q, x.z, hess);
  diffusion_entries(model, x.q, x.z, a);
  double out = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out += f0[i] * grad[i];
    for (std::size_t j = 0; j < n; ++j) out += 0.5 * a[i * n + j] * hess[i * n + j];
  }
  return out;
}

double generator_apply_fd(const GshsModel& model, const ScalarField& phi, const HybridState& x, double h) {
  const std::size_t n = model.dim(x.q);
  if (n == 0) return 0.0;
  const auto& m = model.mode(x.q);
  std::vector<double> step(n);
  for (std::size_t i = 0; i < n; ++i) step[i] = h * (m.box[i].bounded() ? m.box[i].width() : 1.0);

  std::vector<double> f0(n), a(n * n), z = x.z;
  model.drift(x.q, x.z, f0);
  diffusion_entries(model, x.q, x.z, a);
  auto eval = [&](std::size_t i, double di, std::size_t j, double dj) {
    z = x.z;
    z[i] += di;
    z[j] += dj;
    return phi.value(x.q, z);
  };
  const double center = phi.value(x.q, x.z);
  double out = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double hi = step[i];
    const double grad = (eval(i, hi, i, 0.0) - eval(i, -hi, i, 0.0)) / (2.0 * hi);
    out += f0[i] * grad;
    for (std::size_t j = 0; j < n; ++j) {
      if (a[i * n + j] == 0.0) continue;
      double second;
      if (i == j) {
        second = (eval(i, hi, i, 0.0) - 2.0 * center + eval(i, -hi, i, 0.0)) / (hi * hi);
      } else {
        const double hj = step[j];
        second = (eval(i, hi, j, hj) - eval(i, hi, j, -hj) - eval(i, -hi, j, hj) + eval(i, -hi, j, -hj)) /
                 (4.0 * hi * hj);
      }
      out += 0.5 * a[i * n + j] * second;
    }
  }
  return out;
}

HybridState reset_sample(const GshsModel& model, const HybridState& x, Rng& rng) {
  return std::visit(
      Overloaded{[&](const DeterministicMap& d) { return d.map(x); },
                 [&](const MapMixture& mix) {
                   const double u = uniform01(rng);
                   double acc = 0.0;
                   for (const auto& b : mix.branches) {
                     acc += b.weight(x);
                     if (u < acc) return b.map.map(x);
                   }
                   return mix.branches.back().map.map(x);
                 },
                 [&](const DensityKernel& dk) {
                   if (!dk.sampler) throw Unsupported("density reset kernel has no sampler");
                   return dk.sampler(x, rng);
                 },
                 [&](const ModeSwitch& sw) {
                   const double u = uniform01(rng);
                   double acc = 0.0;
                   int last = x.q;
                   for (std::size_t t = 0; t < model.modes.size(); ++t) {
                     if (static_cast<int>(t) == x.q) continue;
                     const double p = sw.pi(x.q, static_cast<int>(t), x.z);
                     if (p <= 0.0) continue;
                     last = static_cast<int>(t);
                     acc += p;
                     if (u < acc) return HybridState{last, x.z};
                   }
                   return HybridState{last, x.z};
                 }},
      model.reset);
}

double kernel_apply(const GshsModel& model, const ScalarField& phi, const HybridState& x, const Partition* partition) {
  return std::visit(
      Overloaded{[&](const DeterministicMap& d) {
                   const auto y = d.map(x);
                   return phi.value(y.q, y.z);
                 },
                 [&](const MapMixture& mix) {
                   double acc = 0.0;
                   for (const auto& b : mix.branches) {
                     const auto y = b.map.map(x);
                     acc += b.weight(x) * phi.value(y.q, y.z);
                   }
                   return acc;
                 },
                 [&](const DensityKernel& dk) {
                   if (!partition) throw Unsupported("density kernel application needs a partition");
                   // Midpoint quadrature renormalized on the truncation, as in the solver transfer.
                   double acc = 0.0, total = 0.0;
                   HybridState y;
                   for (std::size_t c = 0; c < partition->size(); ++c) {
                     y.q = partition->mode_of(c);
                     y.z = partition->center(c);
                     const double w = dk.density(x, y) * partition->cell_volume(c);
                     acc += w * phi.value(y.q, y.z);
                     total += w;
                   }
                   return total > 0.0 ? acc / total : 0.0;
                 },
                 [&](const ModeSwitch& sw) {
                   double acc = 0.0;
                   for (std::size_t t = 0; t < model.modes.size(); ++t) {
                     if (static_cast<int>(t) == x.q) continue;
                     const double p = sw.pi(x.q, static_cast<int>(t), x.z);
                     if (p != 0.0) acc += p * phi.value(static_cast<int>(t), x.z);
                   }
                   return acc;
                 }},
      model.reset);
}

double dual_apply(const GshsModel& model, const GridField& g, const HybridState& x) {
  const auto& part = *g.partition;
  auto branch_sum = [&](const DeterministicMap& d, const std::function<double(const HybridState&)>* weight) {
    if (!d.inverse || !d.jacobian) throw Unsupported("reset map has no declared inverse branches");
    double acc = 0.0;
    for (const auto& y : d.inverse(x)) {
      const double w = weight ? (*weight)(y) : 1.0;
      if (w == 0.0) continue;
      acc += w / std::abs(d.jacobian(y)) * g.interpolate(y.q, y.z);
    }
    return acc;
  };
  return std::visit(Overloaded{[&](const DeterministicMap& d) { return branch_sum(d, nullptr); },
                               [&](const MapMixture& mix) {
                                 double acc = 0.0;
                                 for (const auto& b : mix.branches) acc += branch_sum(b.map, &b.weight);
                                 return acc;
                               },
                               [&](const DensityKernel& dk) {
                                 double acc = 0.0;
                                 HybridState y;
                                 for (std::size_t c = 0; c < part.size(); ++c) {
                                   if (g.values[c] == 0.0) continue;
                                   y.q = part.mode_of(c);
                                   y.z = part.center(c);
                                   acc += dk.density(y, x) * g.values[c] * part.cell_volume(c);
                                 }
                                 return acc;
                               },
                               [&](const ModeSwitch& sw) {
                                 double acc = 0.0;
                                 for (std::size_t t = 0; t < model.modes.size(); ++t) {
                                   if (static_cast<int>(t) == x.q) continue;
                                   const double p = sw.pi(static_cast<int>(t), x.q, x.z);
                                   if (p != 0.0) acc += p * g.lookup(static_cast<int>(t), x.z);
                                 }
                                 return acc;
                               }},
                    model.reset);
}

}  // namespace gshs
