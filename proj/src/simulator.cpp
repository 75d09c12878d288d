#include "gshs/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <exception>

#include <omp.h>

namespace gshs {

std::string_view to_string(JumpKind kind) { return kind == JumpKind::forced ? "forced" : "spontaneous"; }

std::string_view to_string(PathStatus status) {
  switch (status) {
    case PathStatus::completed: return "completed";
    case PathStatus::zeno_aborted: return "zeno-aborted";
    case PathStatus::escaped: return "escaped";
  }
  return "unknown";
}

Rng path_stream(std::uint64_t master_seed, std::uint64_t path_index) {
  std::seed_seq seq{static_cast<std::uint32_t>(master_seed), static_cast<std::uint32_t>(master_seed >> 32),
                    static_cast<std::uint32_t>(path_index), static_cast<std::uint32_t>(path_index >> 32),
                    0x9e3779b9U};
  return Rng(seq);
}

namespace {

std::size_t steps_for(double span, double dt, const char* what) {
  const double k = std::round(span / dt);
  if (std::abs(k * dt - span) > 1e-9 * std::max(1.0, span))
    throw Error(std::string(what) + " must be a multiple of dt");
  return static_cast<std::size_t>(k);
}

// Advances one path over grid steps. Owns scratch buffers only; the random
// stream belongs to the caller.
class PathEngine {
 public:
  PathEngine(const GshsModel& model, const SimulationCaps& caps, Rng& rng) : model_(model), caps_(caps), rng_(rng) {
    std::size_t max_dim = 0;
    for (const auto& m : model.modes) max_dim = std::max(max_dim, m.dim);
    f0_.resize(max_dim);
    z1_.resize(max_dim);
    noise_.resize(max_dim * model.noise_count);
    faces_.resize(model.modes.size());
    for (std::size_t q = 0; q < model.modes.size(); ++q) {
      auto faces = model.modes[q].guard_faces;
      std::stable_sort(faces.begin(), faces.end(), [](const GuardFace& a, const GuardFace& b) { return a.axis < b.axis; });
      faces_[q] = std::move(faces);
    }
  }

  PathStatus status() const { return status_; }
  std::size_t jumps() const { return jumps_; }

  // One grid step [t0, t0 + dt]. Returns false when the path is aborted.
  template <class OnJump>
  bool step(HybridState& x, double t0, double dt, OnJump&& on_jump) {
    const double t_stop = t0 + dt;
    double t = t0;
    double rem = dt;
    while (rem > 0.0) {
      const int q = x.q;
      const auto& mode = model_.modes[static_cast<std::size_t>(q)];
      const std::size_t n = mode.dim;
      std::span<double> z1(z1_.data(), n);

      if (n > 0) {
        std::span<double> f0(f0_.data(), n);
        model_.drift(q, x.z, f0);
        for (std::size_t i = 0; i < n; ++i) z1[i] = x.z[i] + f0[i] * rem;
        if (model_.noise_count > 0) {
          std::span<double> f(noise_.data(), n * model_.noise_count);
          model_.noise(q, x.z, f);
          const double sq = std::sqrt(rem);
          for (std::size_t l = 0; l < model_.noise_count; ++l) {
            const double xi = normal_(rng_) * sq;
            for (std::size_t i = 0; i < n; ++i) z1[i] += f[l * n + i] * xi;
          }
        }
      }

      // First guard face crossed along the step; ties go to the lower axis.
      double best_s = kInf;
      const GuardFace* best_face = nullptr;
      for (const auto& face : faces_[static_cast<std::size_t>(q)]) {
        const std::size_t a = face.axis;
        const double c = mode.face_coordinate(face);
        const bool crossed = face.side == Side::lower ? z1[a] <= c : z1[a] >= c;
        if (!crossed) continue;
        const double denom = z1[a] - x.z[a];
        double s = denom != 0.0 ? (c - x.z[a]) / denom : 0.0;
        s = std::clamp(s, 0.0, 1.0);
        if (!face.extent.empty()) {
          bool inside = true;
          for (std::size_t b = 0; b < n && inside; ++b) {
            if (b == a) continue;
            const double p = x.z[b] + s * (z1[b] - x.z[b]);
            inside = face.extent[b].contains(p);
          }
          if (!inside) continue;
        }
        if (s < best_s) {
          best_s = s;
          best_face = &face;
        }
      }

      double spont_w = kInf;
      const double lam_max = model_.rate_bound[static_cast<std::size_t>(q)];
      if (lam_max > 0.0) {
        const double lam = model_.rate(q, x.z);
        if (lam > lam_max * (1.0 + 1e-12)) throw Error("jump rate exceeds the declared bound in mode " + std::to_string(q));
        if (uniform() < -std::expm1(-lam * rem)) spont_w = uniform();
      }

      if (best_face && best_s <= spont_w) {
        HybridState pre{q, std::vector<double>(n)};
        for (std::size_t i = 0; i < n; ++i) pre.z[i] = x.z[i] + best_s * (z1[i] - x.z[i]);
        pre.z[best_face->axis] = mode.face_coordinate(*best_face);
        const double tau = t + best_s * rem;
        if (!jump(x, std::move(pre), tau, JumpKind::forced, on_jump)) return false;
        t = tau;
        rem = t_stop - t;
        continue;
      }
      if (spont_w < kInf) {
        HybridState pre{q, std::vector<double>(n)};
        for (std::size_t i = 0; i < n; ++i) pre.z[i] = x.z[i] + spont_w * (z1[i] - x.z[i]);
        clamp(mode, pre.z);
        const double tau = t + spont_w * rem;
        if (!jump(x, std::move(pre), tau, JumpKind::spontaneous, on_jump)) return false;
        t = tau;
        rem = t_stop - t;
        continue;
      }

      for (std::size_t i = 0; i < n; ++i) x.z[i] = z1[i];
      clamp(mode, x.z);
      for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(x.z[i]) || std::abs(x.z[i]) > caps_.overflow) {
          status_ = PathStatus::escaped;
          return false;
        }
      }
      break;
    }
    return true;
  }

 private:
  double uniform() { return std::generate_canonical<double, 53>(rng_); }

  static void clamp(const ModeSpec& mode, std::span<double> z) {
    for (std::size_t i = 0; i < mode.dim; ++i) z[i] = std::clamp(z[i], mode.box[i].lo, mode.box[i].hi);
  }

  template <class OnJump>
  bool jump(HybridState& x, HybridState pre, double tau, JumpKind kind, OnJump& on_jump) {
    HybridState post = reset_sample(model_, pre, rng_);
    x = post;
    on_jump(JumpRecord{tau, std::move(pre), std::move(post), kind});
    if (++jumps_ > caps_.max_jumps) {
      status_ = PathStatus::zeno_aborted;
      return false;
    }
    return true;
  }

  const GshsModel& model_;
  const SimulationCaps& caps_;
  Rng& rng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::vector<double> f0_, z1_, noise_;
  std::vector<std::vector<GuardFace>> faces_;
  PathStatus status_ = PathStatus::completed;
  std::size_t jumps_ = 0;
};

struct EnsemblePlan {
  std::size_t n_steps = 0;
  std::size_t n_times = 0;
  std::size_t max_dim = 0;
  std::vector<std::size_t> obs_step;  // step index of each observation time
  std::vector<std::pair<std::size_t, std::size_t>> schedule;
};

EnsemblePlan make_plan(const GshsModel& model, const EnsembleOptions& opt) {
  if (!(opt.dt > 0.0) || !(opt.t_end > 0.0)) throw Error("dt and t_end must be positive");
  if (opt.n_paths == 0) throw Error("n_paths must be at least 1");
  EnsemblePlan plan;
  plan.n_steps = steps_for(opt.t_end, opt.dt, "t_end");
  for (const auto& m : model.modes) plan.max_dim = std::max(plan.max_dim, m.dim);
  for (double t : opt.observe_times) {
    if (t < 0.0 || t > opt.t_end * (1.0 + 1e-12)) throw Error("observation time outside [0, t_end]");
    plan.obs_step.push_back(steps_for(t, opt.dt, "observation time"));
  }
  plan.n_times = plan.obs_step.size();
  for (std::size_t k = 0; k < plan.n_times; ++k) plan.schedule.emplace_back(plan.obs_step[k], k);
  std::sort(plan.schedule.begin(), plan.schedule.end());
  return plan;
}

// Runs path i, writing its observations into the summary slots it owns.
void run_path(const GshsModel& model, const InitialSampler& mu0, const EnsembleOptions& opt, const EnsemblePlan& plan,
              std::size_t i, EnsembleSummary& out, std::vector<JumpRecord>& jumps) {
  Rng rng = path_stream(opt.master_seed, i);
  HybridState x = mu0(rng);
  PathEngine engine(model, opt.caps, rng);
  // (step, observation index) pairs in step order, consumed by a cursor.
  std::size_t cursor = 0;
  auto record = [&](std::size_t step) {
    while (cursor < plan.schedule.size() && plan.schedule[cursor].first == step) {
      const std::size_t slot = i * plan.n_times + plan.schedule[cursor].second;
      out.obs_q[slot] = x.q;
      for (std::size_t d = 0; d < x.z.size(); ++d) out.obs_z[slot * plan.max_dim + d] = x.z[d];
      ++cursor;
    }
  };
  record(0);
  auto on_jump = [&](JumpRecord&& r) { jumps.push_back(std::move(r)); };
  for (std::size_t k = 0; k < plan.n_steps; ++k) {
    if (!engine.step(x, static_cast<double>(k) * opt.dt, opt.dt, on_jump)) break;
    record(k + 1);
  }
  out.status[i] = engine.status();
}

EnsembleSummary allocate(const GshsModel& model, const EnsembleOptions& opt, const EnsemblePlan& plan) {
  EnsembleSummary s;
  for (const auto& m : model.modes) s.mode_dims.push_back(m.dim);
  s.n_paths = opt.n_paths;
  s.t_end = opt.t_end;
  s.dt = opt.dt;
  s.master_seed = opt.master_seed;
  s.observe_times = opt.observe_times;
  s.max_dim = plan.max_dim;
  s.obs_q.assign(opt.n_paths * plan.n_times, -1);
  s.obs_z.assign(opt.n_paths * plan.n_times * plan.max_dim, 0.0);
  s.status.assign(opt.n_paths, PathStatus::completed);
  return s;
}

void gather_jumps(EnsembleSummary& s, std::vector<std::vector<JumpRecord>>& per_path) {
  s.jump_offsets.assign(1, 0);
  std::size_t total = 0;
  for (const auto& v : per_path) total += v.size();
  s.jumps.reserve(total);
  for (auto& v : per_path) {
    for (auto& r : v) s.jumps.push_back(std::move(r));
    s.jump_offsets.push_back(s.jumps.size());
    std::vector<JumpRecord>().swap(v);
  }
}

}  // namespace

Trajectory simulate_path(const GshsModel& model, const HybridState& x0, double t_end, double dt, Rng& rng,
                         const SimulationCaps& caps, std::size_t record_stride) {
  if (!(dt > 0.0) || !(t_end > 0.0)) throw Error("dt and t_end must be positive");
  if (in_guard(model, x0, caps.tol)) throw Error("initial state lies in the guard set");
  const std::size_t n_steps = steps_for(t_end, dt, "t_end");
  record_stride = std::max<std::size_t>(record_stride, 1);
  Trajectory tr;
  HybridState x = x0;
  tr.times.push_back(0.0);
  tr.states.push_back(x);
  PathEngine engine(model, caps, rng);
  auto on_jump = [&](JumpRecord&& r) { tr.jumps.push_back(std::move(r)); };
  for (std::size_t k = 0; k < n_steps; ++k) {
    const bool alive = engine.step(x, static_cast<double>(k) * dt, dt, on_jump);
    if (alive && ((k + 1) % record_stride == 0 || k + 1 == n_steps)) {
      tr.times.push_back(static_cast<double>(k + 1) * dt);
      tr.states.push_back(x);
    }
    if (!alive) break;
  }
  tr.status = engine.status();
  return tr;
}

std::size_t EnsembleSummary::time_index(double t) const {
  for (std::size_t k = 0; k < observe_times.size(); ++k)
    if (std::abs(observe_times[k] - t) <= 1e-9 * std::max(1.0, std::abs(t))) return k;
  throw Error("time " + std::to_string(t) + " was not observed by the ensemble");
}

HybridState EnsembleSummary::observed(std::size_t path, std::size_t k) const {
  const std::size_t slot = path * n_times() + k;
  HybridState x;
  x.q = obs_q[slot];
  if (x.q < 0) return x;
  const auto first = obs_z.begin() + static_cast<std::ptrdiff_t>(slot * max_dim);
  x.z.assign(first, first + static_cast<std::ptrdiff_t>(mode_dims[static_cast<std::size_t>(x.q)]));
  return x;
}

std::size_t EnsembleSummary::count(PathStatus s) const {
  return static_cast<std::size_t>(std::count(status.begin(), status.end(), s));
}

std::size_t EnsembleSummary::count(JumpKind kind) const {
  return static_cast<std::size_t>(
      std::count_if(jumps.begin(), jumps.end(), [kind](const JumpRecord& r) { return r.kind == kind; }));
}

EnsembleSummary simulate_ensemble_serial(const GshsModel& model, const InitialSampler& mu0,
                                         const EnsembleOptions& options) {
  const auto plan = make_plan(model, options);
  auto out = allocate(model, options, plan);
  std::vector<std::vector<JumpRecord>> per_path(options.n_paths);
  for (std::size_t i = 0; i < options.n_paths; ++i) run_path(model, mu0, options, plan, i, out, per_path[i]);
  gather_jumps(out, per_path);
  return out;
}

EnsembleSummary simulate_ensemble(const GshsModel& model, const InitialSampler& mu0, const EnsembleOptions& options) {
  const auto plan = make_plan(model, options);
  auto out = allocate(model, options, plan);
  std::vector<std::vector<JumpRecord>> per_path(options.n_paths);
  std::vector<std::exception_ptr> errors(options.n_paths);
  const auto n = static_cast<std::int64_t>(options.n_paths);
  const int threads = options.threads > 0 ? options.threads : omp_get_max_threads();

#pragma omp parallel for schedule(dynamic, 64) num_threads(threads)
  for (std::int64_t i = 0; i < n; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    try {
      run_path(model, mu0, options, plan, idx, out, per_path[idx]);
    } catch (...) {
      errors[idx] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  gather_jumps(out, per_path);
  return out;
}

double expected_jump_count(const EnsembleSummary& summary) {
  if (summary.n_paths == 0) return 0.0;
  return static_cast<double>(summary.jumps.size()) / static_cast<double>(summary.n_paths);
}

}  // namespace gshs
