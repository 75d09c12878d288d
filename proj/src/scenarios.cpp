#include "gshs/scenarios.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numbers>

#include "gshs/oracles.hpp"

namespace gshs {
namespace {

double uniform01(Rng& rng) { return std::generate_canonical<double, 53>(rng); }

// Uniform on the open interval (0, 1).
double open_uniform(Rng& rng) {
  double u = 0.0;
  while (u == 0.0) u = uniform01(rng);
  return u;
}

class Params {
 public:
  Params(std::string scenario, std::map<std::string, double> defaults, std::vector<std::string> initials,
         const Overrides& overrides)
      : values_(std::move(defaults)), initials_(std::move(initials)) {
    initial_ = initials_.front();
    for (const auto& [key, text] : overrides) {
      if (key == "initial") {
        if (std::find(initials_.begin(), initials_.end(), text) == initials_.end())
          throw ValidationError("initial", "unknown initial law '" + text + "' for scenario " + scenario);
        initial_ = text;
        continue;
      }
      auto it = values_.find(key);
      if (it == values_.end()) throw ValidationError(key, "unknown parameter for scenario " + scenario);
      it->second = parse(key, text);
    }
  }

  double operator[](const std::string& key) const { return values_.at(key); }
  void set(const std::string& key, double v) { values_[key] = v; }
  const std::string& initial() const { return initial_; }
  const std::map<std::string, double>& all() const { return values_; }

  std::size_t count(const std::string& key, double min = 1.0) const {
    const double v = values_.at(key);
    if (!(v >= min) || v != std::floor(v) || v > 1e12) throw ValidationError(key, "must be an integer >= " + fmt(min));
    return static_cast<std::size_t>(v);
  }
  double positive(const std::string& key) const {
    const double v = values_.at(key);
    if (!(v > 0.0) || !std::isfinite(v)) throw ValidationError(key, "must be positive");
    return v;
  }
  double finite(const std::string& key) const {
    const double v = values_.at(key);
    if (!std::isfinite(v)) throw ValidationError(key, "must be finite");
    return v;
  }

 private:
  static std::string fmt(double v) {
    char buf[32];
    auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
  }
  static double parse(const std::string& key, const std::string& text) {
    double v = 0.0;
    const char* first = text.data();
    const char* last = text.data() + text.size();
    if (!text.empty() && *first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last) throw ValidationError(key, "not a number: '" + text + "'");
    return v;
  }

  std::map<std::string, double> values_;
  std::vector<std::string> initials_;
  std::string initial_;
};

std::map<std::string, double> with_resolution(std::map<std::string, double> m, double dt, double t_end, double paths,
                                              double bin) {
  m.emplace("dt", dt);
  m.emplace("t_end", t_end);
  m.emplace("paths", paths);
  m.emplace("bin", bin);
  return m;
}

bool multiple_of(double span, double step) {
  const double k = std::round(span / step);
  return k >= 1.0 && std::abs(k * step - span) <= 1e-9 * std::max(1.0, span);
}

void apply_resolution(Scenario& s, const Params& p) {
  s.dt = p.positive("dt");
  s.t_end = p.positive("t_end");
  s.n_paths = p.count("paths");
  s.bin_width = p.positive("bin");
  if (!multiple_of(s.t_end, s.dt)) throw ValidationError("t_end", "must be a multiple of dt");
  if (!multiple_of(s.t_end, s.bin_width)) throw ValidationError("t_end", "must be a multiple of bin");
  if (!multiple_of(s.bin_width, s.dt)) throw ValidationError("bin", "must be a multiple of dt");
  s.params = p.all();
}

std::shared_ptr<const Partition> line_partition(std::vector<std::pair<Interval, std::size_t>> modes) {
  std::vector<ModeGrid> grids;
  for (auto& [iv, cells] : modes) grids.push_back(ModeGrid{{cells}, {iv}});
  return std::make_shared<const Partition>(std::move(grids));
}

std::shared_ptr<const Partition> atoms(std::size_t n) {
  return std::make_shared<const Partition>(std::vector<ModeGrid>(n));
}

// Masses of weight * Uniform[a, b] on the 1-D mode q.
std::vector<double> uniform_masses(const Partition& part, int q, double a, double b, double weight) {
  std::vector<double> m(part.size(), 0.0);
  const auto& tr = part.grid(q).truncation[0];
  const double h = part.spacing(q, 0);
  for (std::size_t k = 0; k < part.mode_cells(q); ++k) {
    const double lo = tr.lo + static_cast<double>(k) * h;
    const double overlap = std::max(0.0, std::min(b, lo + h) - std::max(a, lo));
    m[part.offset(q) + k] = weight * overlap / (b - a);
  }
  return m;
}

std::vector<double> point_masses(const Partition& part, const HybridState& x) {
  std::vector<double> m(part.size(), 0.0);
  m[part.locate(x)] = 1.0;
  return m;
}

InitialLaw gaussian_law(int q, oracle::Gaussian g, std::string name) {
  InitialLaw law;
  law.name = std::move(name);
  law.sample = [q, g](Rng& rng) {
    std::normal_distribution<double> n(g.mean, g.sd);
    return HybridState{q, {n(rng)}};
  };
  law.masses = [q, g](const Partition& part) { return oracle::normal_cell_masses(part, q, g); };
  return law;
}

InitialLaw atom_law(int q, std::string name) {
  InitialLaw law;
  law.name = std::move(name);
  law.sample = [q](Rng&) { return HybridState{q, {}}; };
  law.masses = [q](const Partition& part) { return point_masses(part, HybridState{q, {}}); };
  return law;
}

// ---------------------------------------------------------------- catalog

Scenario conveyor(const Overrides& ov) {
  Params p("conveyor", with_resolution({{"v", 1.0}, {"grid", 100}}, 1e-3, 5.0, 1e5, 0.1), {"uniform", "delta"}, ov);
  Scenario s;
  s.name = "conveyor";
  apply_resolution(s, p);
  const double v = p.positive("v");
  ModeSpec m{0, 1, {{0.0, 1.0}}, {GuardFace{0, Side::upper, {}}}};
  s.model.modes = {m};
  s.model.drift = [v](int, std::span<const double>, std::span<double> out) { out[0] = v; };
  s.model.rate_bound = {0.0};
  s.model.reset = DeterministicMap{[](const HybridState&) { return HybridState{0, {0.0}}; }, {}, {}};
  s.partition = line_partition({{{0.0, 1.0}, p.count("grid")}});
  if (p.initial() == "uniform") {
    s.mu0.name = "uniform";
    s.mu0.sample = [](Rng& rng) { return HybridState{0, {uniform01(rng)}}; };
    s.mu0.masses = [](const Partition& part) { return uniform_masses(part, 0, 0.0, 1.0, 1.0); };
  } else {
    s.mu0.name = "delta";
    s.mu0.sample = [](Rng&) { return HybridState{0, {0.0}}; };
    s.mu0.masses = [](const Partition& part) { return point_masses(part, HybridState{0, {0.0}}); };
  }
  return s;
}

// Discrete chain with off-diagonal rates gamma (row = from).
void chain_model(Scenario& s, const Eigen::MatrixXd& gamma) {
  const auto n = static_cast<std::size_t>(gamma.rows());
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) out[i] += gamma(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  for (std::size_t i = 0; i < n; ++i) {
    s.model.modes.push_back(ModeSpec{static_cast<int>(i), 0, {}, {}});
    if (!(out[i] > 0.0)) throw ValidationError("rates", "every state needs a positive exit rate");
  }
  s.model.drift = [](int, std::span<const double>, std::span<double>) {};
  s.model.rate = [out](int q, std::span<const double>) { return out[static_cast<std::size_t>(q)]; };
  s.model.rate_bound = out;
  s.model.reset = ModeSwitch{[gamma, out](int from, int to, std::span<const double>) {
    if (from == to) return 0.0;
    return gamma(from, to) / out[static_cast<std::size_t>(from)];
  }};
  Eigen::MatrixXd q = gamma;
  for (std::size_t i = 0; i < n; ++i) q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) = -out[i];
  s.generator = q;
  s.partition = atoms(n);
  s.solver = SolverKind::master;
}

InitialLaw chain_initial(const std::string& which, std::size_t n) {
  if (which == "uniform") {
    InitialLaw law;
    law.name = "uniform";
    law.sample = [n](Rng& rng) {
      const auto q = std::min(n - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)));
      return HybridState{static_cast<int>(q), {}};
    };
    law.masses = [n](const Partition& part) { return std::vector<double>(part.size(), 1.0 / static_cast<double>(n)); };
    return law;
  }
  return atom_law(which == "mode1" ? 1 : 0, which);
}

Scenario ctmc2(const Overrides& ov) {
  Overrides o = ov;
  if (auto it = o.find("lambda"); it != o.end()) {
    o.emplace("l01", it->second);
    o.emplace("l10", it->second);
    o.erase(it);
  }
  Params p("ctmc2", with_resolution({{"l01", 1.0}, {"l10", 1.0}}, 1e-3, 2.0, 1e5, 0.1), {"mode0", "mode1", "uniform"}, o);
  Scenario s;
  s.name = "ctmc2";
  apply_resolution(s, p);
  Eigen::MatrixXd gamma = Eigen::MatrixXd::Zero(2, 2);
  gamma(0, 1) = p.positive("l01");
  gamma(1, 0) = p.positive("l10");
  chain_model(s, gamma);
  s.mu0 = chain_initial(p.initial(), 2);
  return s;
}

Scenario ctmc_n(const Overrides& ov) {
  Params p("ctmc-n",
           with_resolution({{"n", 5}, {"rate_seed", 7}, {"rate_min", 0.5}, {"rate_max", 2.0}}, 1e-3, 2.0, 1e5, 0.1),
           {"mode0", "uniform"}, ov);
  Scenario s;
  s.name = "ctmc-n";
  apply_resolution(s, p);
  const std::size_t n = p.count("n", 2.0);
  const double lo = p.positive("rate_min");
  const double hi = p.positive("rate_max");
  if (hi < lo) throw ValidationError("rate_max", "must not be below rate_min");
  Rng rng(static_cast<std::uint64_t>(p.count("rate_seed", 0.0)));
  Eigen::MatrixXd gamma = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < gamma.rows(); ++i)
    for (Eigen::Index j = 0; j < gamma.cols(); ++j)
      if (i != j) gamma(i, j) = lo + (hi - lo) * uniform01(rng);
  chain_model(s, gamma);
  s.mu0 = chain_initial(p.initial(), n);
  return s;
}

Scenario pure_jump_continuous(const Overrides& ov) {
  Params p("pure-jump-continuous",
           with_resolution({{"lambda", 1.0}, {"jump_sd", 0.5}, {"L", 6.0}, {"grid", 240}, {"init_mean", 0.0}, {"init_sd", 0.5}},
                           1e-3, 1.0, 1e5, 0.1),
           {"gaussian"}, ov);
  Scenario s;
  s.name = "pure-jump-continuous";
  apply_resolution(s, p);
  const double lam = p.positive("lambda");
  const double sd = p.positive("jump_sd");
  const double half = p.positive("L");
  s.model.modes = {ModeSpec{0, 1, {{-kInf, kInf}}, {}}};
  s.model.drift = [](int, std::span<const double>, std::span<double> out) { out[0] = 0.0; };
  s.model.rate = [lam](int, std::span<const double>) { return lam; };
  s.model.rate_bound = {lam};
  s.model.reset = DensityKernel{[sd](const HybridState& x, const HybridState& y) {
                                  return oracle::normal_pdf(y.z[0], {x.z[0], sd});
                                },
                                [sd](const HybridState& x, Rng& rng) {
                                  std::normal_distribution<double> n(x.z[0], sd);
                                  return HybridState{0, {n(rng)}};
                                }};
  s.partition = line_partition({{{-half, half}, p.count("grid")}});
  s.mu0 = gaussian_law(0, {p.finite("init_mean"), p.positive("init_sd")}, "gaussian");
  s.solver = SolverKind::master;
  return s;
}

Scenario switching_ou(const Overrides& ov) {
  Params p("switching-ou",
           with_resolution({{"m0", -1.0}, {"m1", 1.0}, {"theta", 1.0}, {"sigma", 1.0}, {"lambda", 1.0}, {"L", 6.0},
                            {"grid", 240}, {"init_mean", 0.0}, {"init_sd", 0.5}},
                           1e-3, 2.0, 1e5, 0.1),
           {"gaussian"}, ov);
  Scenario s;
  s.name = "switching-ou";
  apply_resolution(s, p);
  const double m[2] = {p.finite("m0"), p.finite("m1")};
  const double theta = p.positive("theta");
  const double sigma = p.finite("sigma");
  const double lam = p.finite("lambda");
  if (lam < 0.0) throw ValidationError("lambda", "must be non-negative");
  const double half = p.positive("L");
  for (int q = 0; q < 2; ++q) s.model.modes.push_back(ModeSpec{q, 1, {{-kInf, kInf}}, {}});
  s.model.noise_count = 1;
  s.model.drift = [m0 = m[0], m1 = m[1], theta](int q, std::span<const double> z, std::span<double> out) {
    out[0] = -theta * (z[0] - (q == 0 ? m0 : m1));
  };
  s.model.noise = [sigma](int, std::span<const double>, std::span<double> out) { out[0] = sigma; };
  s.model.rate = [lam](int, std::span<const double>) { return lam; };
  s.model.rate_bound = {lam, lam};
  s.model.reset = ModeSwitch{[](int from, int to, std::span<const double>) { return from == to ? 0.0 : 1.0; }};
  const std::size_t grid = p.count("grid");
  s.partition = line_partition({{{-half, half}, grid}, {{-half, half}, grid}});
  s.mu0 = gaussian_law(0, {p.finite("init_mean"), p.positive("init_sd")}, "gaussian");
  s.solver = SolverKind::switching;
  return s;
}

Scenario hespanha_halving(const Overrides& ov) {
  Params p("hespanha-halving",
           with_resolution({{"growth", 1.0}, {"sigma", 0.5}, {"lambda", 1.0}, {"lo", -3.0}, {"hi", 9.0}, {"grid", 240},
                            {"init_mean", 1.0}, {"init_sd", 0.5}},
                           1e-3, 2.0, 1e5, 0.1),
           {"gaussian"}, ov);
  Scenario s;
  s.name = "hespanha-halving";
  apply_resolution(s, p);
  const double growth = p.finite("growth");
  const double sigma = p.finite("sigma");
  const double lam = p.finite("lambda");
  if (lam < 0.0) throw ValidationError("lambda", "must be non-negative");
  const double lo = p.finite("lo");
  const double hi = p.finite("hi");
  if (!(lo < 0.0 && hi > 0.0)) throw ValidationError("lo", "truncation must contain 0 so that it is invariant under halving");
  s.model.modes = {ModeSpec{0, 1, {{-kInf, kInf}}, {}}};
  s.model.noise_count = 1;
  s.model.drift = [growth](int, std::span<const double>, std::span<double> out) { out[0] = growth; };
  s.model.noise = [sigma](int, std::span<const double>, std::span<double> out) { out[0] = sigma; };
  s.model.rate = [lam](int, std::span<const double>) { return lam; };
  s.model.rate_bound = {lam};
  DeterministicMap half;
  half.map = [](const HybridState& x) { return HybridState{x.q, {0.5 * x.z[0]}}; };
  half.inverse = [](const HybridState& y) { return std::vector<HybridState>{{y.q, {2.0 * y.z[0]}}}; };
  half.jacobian = [](const HybridState&) { return 0.5; };
  s.model.reset = half;
  s.partition = line_partition({{{lo, hi}, p.count("grid")}});
  s.mu0 = gaussian_law(0, {p.finite("init_mean"), p.positive("init_sd")}, "gaussian");
  s.solver = SolverKind::spontaneous;
  return s;
}

Scenario thermostat_1d(const Overrides& ov) {
  Params p("thermostat-1d",
           with_resolution({{"z_min", -1.0}, {"z_max", 1.0}, {"drift_off", -1.0}, {"drift_on", 1.0}, {"sigma", 1.0},
                            {"margin", 6.0}, {"grid", 40}},
                           1e-3, 5.0, 1e5, 0.1),
           {"uniform"}, ov);
  Scenario s;
  s.name = "thermostat-1d";
  apply_resolution(s, p);
  const double z_min = p.finite("z_min");
  const double z_max = p.finite("z_max");
  if (!(z_min < z_max)) throw ValidationError("z_max", "must exceed z_min");
  const double drift[2] = {p.finite("drift_off"), p.finite("drift_on")};
  const double sigma = p.finite("sigma");
  const std::size_t grid = p.count("grid");
  const double h = (z_max - z_min) / static_cast<double>(grid);
  const auto extra = static_cast<std::size_t>(std::max(1.0, std::round(p.positive("margin") / h)));
  s.model.modes = {ModeSpec{0, 1, {{z_min, kInf}}, {GuardFace{0, Side::lower, {}}}},
                   ModeSpec{1, 1, {{-kInf, z_max}}, {GuardFace{0, Side::upper, {}}}}};
  s.model.noise_count = 1;
  s.model.drift = [d0 = drift[0], d1 = drift[1]](int q, std::span<const double>, std::span<double> out) {
    out[0] = q == 0 ? d0 : d1;
  };
  s.model.noise = [sigma](int, std::span<const double>, std::span<double> out) { out[0] = sigma; };
  s.model.rate_bound = {0.0, 0.0};
  s.model.reset = DeterministicMap{[](const HybridState& x) { return HybridState{1 - x.q, x.z}; },
                                   [](const HybridState& y) { return std::vector<HybridState>{{1 - y.q, y.z}}; },
                                   [](const HybridState&) { return 1.0; }};
  const double reach = static_cast<double>(extra) * h;
  s.partition = line_partition({{{z_min, z_max + reach}, grid + extra}, {{z_min - reach, z_max}, grid + extra}});
  s.mu0.name = "uniform";
  s.mu0.sample = [z_min, z_max](Rng& rng) {
    const int q = uniform01(rng) < 0.5 ? 0 : 1;
    return HybridState{q, {z_min + open_uniform(rng) * (z_max - z_min)}};
  };
  s.mu0.masses = [z_min, z_max](const Partition& part) {
    auto m = uniform_masses(part, 0, z_min, z_max, 0.5);
    const auto m1 = uniform_masses(part, 1, z_min, z_max, 0.5);
    for (std::size_t c = 0; c < m.size(); ++c) m[c] += m1[c];
    return m;
  };
  s.solver = SolverKind::thermostat;
  return s;
}

}  // namespace

GridDensity InitialLaw::density(std::shared_ptr<const Partition> partition) const {
  GridDensity g;
  g.p = masses(*partition);
  for (std::size_t c = 0; c < g.p.size(); ++c) g.p[c] /= partition->cell_volume(c);
  g.partition = std::move(partition);
  return g;
}

std::string_view to_string(SolverKind kind) {
  switch (kind) {
    case SolverKind::none: return "none";
    case SolverKind::master: return "master";
    case SolverKind::spontaneous: return "spontaneous";
    case SolverKind::switching: return "switching";
    case SolverKind::thermostat: return "thermostat";
  }
  return "none";
}

const std::vector<std::string>& catalog() {
  static const std::vector<std::string> names{"conveyor",     "ctmc2",           "ctmc-n",       "pure-jump-continuous",
                                              "switching-ou", "hespanha-halving", "thermostat-1d"};
  return names;
}

Scenario build(const std::string& name, const Overrides& overrides) {
  Scenario s;
  if (name == "conveyor") s = conveyor(overrides);
  else if (name == "ctmc2") s = ctmc2(overrides);
  else if (name == "ctmc-n") s = ctmc_n(overrides);
  else if (name == "pure-jump-continuous") s = pure_jump_continuous(overrides);
  else if (name == "switching-ou") s = switching_ou(overrides);
  else if (name == "hespanha-halving") s = hespanha_halving(overrides);
  else if (name == "thermostat-1d") s = thermostat_1d(overrides);
  else throw ValidationError("scenario", "unknown scenario '" + name + "'");
  validate(s.model);
  return s;
}

}  // namespace gshs
