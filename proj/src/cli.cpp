#include "gshs/cli.hpp"

#include <cinttypes>
#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>
#include <omp.h>

#include "cli_common.hpp"

namespace gshs::cli {
namespace detail {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

CsvWriter::CsvWriter(const std::filesystem::path& file, const std::string& comment,
                     const std::vector<std::string>& header)
    : out_(file) {
  if (!out_) throw Error("cannot write " + file.string());
  out_ << "# " << comment << '\n';
  for (const auto& h : header) *this << h;
  end_row();
}

void CsvWriter::sep() {
  if (!first_) out_ << ',';
  first_ = false;
}

CsvWriter& CsvWriter::operator<<(double v) {
  sep();
  out_ << fmt(v);
  return *this;
}

CsvWriter& CsvWriter::operator<<(long long v) {
  sep();
  out_ << v;
  return *this;
}

CsvWriter& CsvWriter::operator<<(const std::string& v) {
  sep();
  out_ << v;
  return *this;
}

void CsvWriter::end_row() {
  out_ << '\n';
  first_ = true;
}

void Timer::report(const char* what) {
  if (!enabled_) return;
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  std::fprintf(stderr, "[timing] %s: %.3f s\n", what, s);
}

Scenario load_scenario(const RunConfig& cfg) { return build(cfg.scenario, cfg.overrides); }

std::string comment_line(const Scenario& s, const RunConfig& cfg) {
  std::string c = "scenario=" + s.name + " initial=" + s.mu0.name + " seed=" + std::to_string(cfg.seed);
  for (const auto& [k, v] : s.params) c += " " + k + "=" + fmt(v);
  return c;
}

void write_json(const std::filesystem::path& file, const Json& j) {
  std::ofstream out(file);
  if (!out) throw Error("cannot write " + file.string());
  out << j.dump(2) << '\n';
}

std::vector<double> law_times(const Scenario& s) {
  const auto n = static_cast<std::size_t>(std::llround(s.t_end / s.bin_width));
  std::vector<double> t(n + 1);
  for (std::size_t k = 0; k <= n; ++k) t[k] = static_cast<double>(k) * s.bin_width;
  t.back() = s.t_end;
  return t;
}

EnsembleSummary run_ensemble(const Scenario& s, const RunConfig& cfg, const std::vector<double>& times) {
  EnsembleOptions opt;
  opt.n_paths = s.n_paths;
  opt.t_end = s.t_end;
  opt.dt = s.dt;
  opt.master_seed = cfg.seed;
  opt.observe_times = times;
  opt.threads = cfg.threads;
  return simulate_ensemble(s.model, s.mu0.sample, opt);
}

SolverRun run_solver(const Scenario& s, const RunConfig& cfg, const std::vector<double>& times, double t_end) {
  SolveOptions opt;
  opt.t_end = t_end;
  opt.dt = cfg.overrides.count("dt") ? s.dt : 0.0;
  for (double t : times)
    if (t > 1e-12 && t < t_end - 1e-12) opt.snapshot_times.push_back(t);
  const auto p0 = s.mu0.density(s.partition);
  SolverRun run;
  switch (s.solver) {
    case SolverKind::none: throw Unsupported("scenario " + s.name + " has no grid solver");
    case SolverKind::master:
      run.rates = s.generator ? RateOperator::from_generator(*s.generator, s.partition)
                              : RateOperator::from_model(s.model, s.partition);
      run.result = solve_master_equation(*run.rates, p0, opt);
      break;
    case SolverKind::spontaneous: run.result = solve_spontaneous_fpk(s.model, p0, opt); break;
    case SolverKind::switching: run.result = solve_switching_fpk(s.model, p0, opt); break;
    case SolverKind::thermostat:
      run.thermostat = solve_forced_thermostat(s.model, p0, opt);
      run.result = run.thermostat->solution;
      break;
  }
  return run;
}

IntensityEstimate solver_intensity(const Scenario& s, const SolverRun& run, const GridDensity& p) {
  switch (s.solver) {
    case SolverKind::master: return master_intensity(*run.rates, p);
    case SolverKind::thermostat: return thermostat_intensity(s.model, p);
    default: return spontaneous_intensity(s.model, p);
  }
}

std::vector<std::string> z_header(const Partition& part) {
  std::vector<std::string> h;
  for (std::size_t a = 0; a < part.max_dim(); ++a) h.push_back("z" + std::to_string(a));
  return h;
}

void write_cell(CsvWriter& csv, const Partition& part, std::size_t cell) {
  const int q = part.mode_of(cell);
  csv << static_cast<long long>(q) << static_cast<long long>(cell - part.offset(q));
  const auto z = part.center(cell);
  for (std::size_t a = 0; a < part.max_dim(); ++a) {
    if (a < z.size()) csv << z[a];
    else csv << std::string();
  }
}

}  // namespace detail

using namespace detail;

// ---------------------------------------------------------------- config

void apply_config_file(const std::filesystem::path& file, RunConfig& cfg) {
  std::ifstream in(file);
  if (!in) throw ValidationError("config", "cannot read " + file.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const std::exception& e) {
    throw ValidationError("config", std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ValidationError("config", "top level must be an object");
  auto number = [](const Json& v, const std::string& key) {
    if (!v.is_number()) throw ValidationError("config." + key, "must be a number");
    return v.get<double>();
  };
  auto text = [&](const Json& v, const std::string& key) {
    if (v.is_string()) return v.get<std::string>();
    return fmt(number(v, key));
  };
  for (const auto& [key, v] : j.items()) {
    if (key == "scenario") {
      if (!v.is_string()) throw ValidationError("config.scenario", "must be a string");
      cfg.scenario = v.get<std::string>();
    } else if (key == "command") {
      if (!v.is_string() || v.get<std::string>() != cfg.command)
        throw ValidationError("config.command", "does not match the subcommand");
    } else if (key == "seed") {
      if (!v.is_number_unsigned()) throw ValidationError("config.seed", "must be an unsigned 64-bit integer");
      cfg.seed = v.get<std::uint64_t>();
    } else if (key == "out") {
      if (!v.is_string()) throw ValidationError("config.out", "must be a string");
      cfg.out_dir = v.get<std::string>();
    } else if (key == "paths" || key == "dt" || key == "grid" || key == "t_end" || key == "bin") {
      cfg.overrides[key] = text(v, key);
    } else if (key == "overrides") {
      if (!v.is_object()) throw ValidationError("config.overrides", "must be an object");
      for (const auto& [k, val] : v.items()) cfg.overrides[k] = text(val, "overrides." + k);
    } else if (key == "tolerances") {
      if (!v.is_object()) throw ValidationError("config.tolerances", "must be an object");
      for (const auto& [k, val] : v.items()) cfg.tolerances[k] = number(val, "tolerances." + k);
    } else if (key == "threads") {
      if (!v.is_number_integer()) throw ValidationError("config.threads", "must be an integer");
      cfg.threads = v.get<int>();
    } else if (key == "dump_paths") {
      if (!v.is_number_unsigned()) throw ValidationError("config.dump_paths", "must be a non-negative integer");
      cfg.dump_paths = v.get<std::size_t>();
    } else {
      throw ValidationError("config." + key, "unknown key");
    }
  }
}

void validate_config(const RunConfig& cfg) {
  static const std::vector<std::string> commands{"simulate", "solve", "verify", "compare"};
  if (std::find(commands.begin(), commands.end(), cfg.command) == commands.end())
    throw ValidationError("command", "unknown command '" + cfg.command + "'");
  if (cfg.scenario.empty()) throw ValidationError("scenario", "is required (--scenario or config file)");
  const auto& names = catalog();
  if (std::find(names.begin(), names.end(), cfg.scenario) == names.end())
    throw ValidationError("scenario", "unknown scenario '" + cfg.scenario + "'");
  for (const auto& [name, v] : cfg.tolerances)
    if (!(v > 0.0) || !std::isfinite(v)) throw ValidationError("tolerances." + name, "must be positive");
  if (cfg.threads < 0) throw ValidationError("threads", "must be non-negative");
}

// ---------------------------------------------------------------- simulate

int run_simulate(const RunConfig& cfg) {
  Timer timer(cfg.timing);
  const auto s = load_scenario(cfg);
  const auto& part = *s.partition;
  const auto times = law_times(s);
  const auto summary = run_ensemble(s, cfg, times);
  timer.report("ensemble");
  const auto law = estimate_law(summary, s.partition, times);
  const auto counts = estimate_jump_measure(summary, s.partition, s.bin_width);
  const auto est = mean_jump_intensity(counts);
  std::filesystem::create_directories(cfg.out_dir);
  const auto comment = comment_line(s, cfg);

  Json j;
  j["command"] = "simulate";
  j["scenario"] = s.name;
  j["initial"] = s.mu0.name;
  j["seed"] = cfg.seed;
  j["params"] = s.params;
  j["status"] = {{"completed", summary.count(PathStatus::completed)},
                 {"zeno_aborted", summary.count(PathStatus::zeno_aborted)},
                 {"escaped", summary.count(PathStatus::escaped)}};
  j["jumps"] = {{"total", summary.jumps.size()},
                {"spontaneous", summary.count(JumpKind::spontaneous)},
                {"forced", summary.count(JumpKind::forced)},
                {"mean_per_path", expected_jump_count(summary)}};
  std::vector<double> totals, source_totals;
  for (std::size_t b = 0; b < est.n_bins; ++b) {
    totals.push_back(est.sink_total(b));
    source_totals.push_back(est.source_total(b));
  }
  j["intensity"] = {{"bin", s.bin_width},
                    {"r_total", totals},
                    {"r_source_total", source_totals},
                    {"smoothness", est.smoothness},
                    {"threshold", kSmoothnessThreshold},
                    {"no_mean_intensity", est.no_mean_intensity}};
  std::vector<double> deficit;
  for (std::size_t k = 0; k < times.size(); ++k) deficit.push_back(law.deficit(k));
  j["law"] = {{"times", times}, {"deficit", deficit}};
  write_json(cfg.out_dir / "summary.json", j);

  {
    auto header = std::vector<std::string>{"t", "mode", "cell"};
    for (auto& z : z_header(part)) header.push_back(z);
    header.push_back("mass");
    CsvWriter csv(cfg.out_dir / "law.csv", comment, header);
    for (std::size_t k = 0; k < times.size(); ++k) {
      const auto m = law.masses(k);
      for (std::size_t c = 0; c < part.size(); ++c) {
        csv << times[k];
        write_cell(csv, part, c);
        csv << m[c];
        csv.end_row();
      }
    }
  }
  {
    auto header = std::vector<std::string>{"t_lo", "t_hi", "mode", "cell"};
    for (auto& z : z_header(part)) header.push_back(z);
    for (const char* h : {"r", "r_source", "r_spont", "r_forced"}) header.push_back(h);
    CsvWriter csv(cfg.out_dir / "intensity.csv", comment, header);
    for (std::size_t b = 0; b < est.n_bins; ++b) {
      for (std::size_t slot = 0; slot < est.slots(); ++slot) {
        const double r = est.sink_at(b, slot);
        const double src = est.source_at(b, slot);
        if (r == 0.0 && src == 0.0) continue;
        csv << static_cast<double>(b) * s.bin_width << static_cast<double>(b + 1) * s.bin_width;
        if (slot == est.outside_slot()) {
          csv << -1LL << -1LL;
          for (std::size_t a = 0; a < part.max_dim(); ++a) csv << std::string();
        } else {
          write_cell(csv, part, slot);
        }
        csv << r << src << est.spont_at(b, slot) << est.forced_at(b, slot);
        csv.end_row();
      }
    }
  }
  if (cfg.dump_paths > 0) {
    const std::size_t n = std::min(cfg.dump_paths, s.n_paths);
    const auto stride = static_cast<std::size_t>(std::max(1.0, std::round(s.bin_width / s.dt / 10.0)));
    auto header = std::vector<std::string>{"path", "t", "q"};
    for (auto& z : z_header(part)) header.push_back(z);
    header.push_back("event");
    CsvWriter csv(cfg.out_dir / "trajectories.csv", comment, header);
    auto row = [&](std::size_t i, double t, const HybridState& x, const std::string& event) {
      csv << static_cast<long long>(i) << t << static_cast<long long>(x.q);
      for (std::size_t a = 0; a < part.max_dim(); ++a) {
        if (a < x.z.size()) csv << x.z[a];
        else csv << std::string();
      }
      csv << event;
      csv.end_row();
    };
    for (std::size_t i = 0; i < n; ++i) {
      Rng rng = path_stream(cfg.seed, i);
      const auto x0 = s.mu0.sample(rng);
      const auto tr = simulate_path(s.model, x0, s.t_end, s.dt, rng, {}, stride);
      std::size_t jr = 0;
      for (std::size_t k = 0; k < tr.times.size(); ++k) {
        while (jr < tr.jumps.size() && tr.jumps[jr].time <= tr.times[k]) {
          const auto& rec = tr.jumps[jr++];
          const std::string kind(to_string(rec.kind));
          row(i, rec.time, rec.pre, "pre-" + kind);
          row(i, rec.time, rec.post, "post-" + kind);
        }
        row(i, tr.times[k], tr.states[k], "state");
      }
    }
  }
  timer.report("simulate total");
  return kExitOk;
}

// ---------------------------------------------------------------- solve

int run_solve(const RunConfig& cfg) {
  Timer timer(cfg.timing);
  const auto s = load_scenario(cfg);
  const auto& part = *s.partition;
  const auto times = law_times(s);
  const auto run = run_solver(s, cfg, times, s.t_end);
  timer.report("solve");
  std::filesystem::create_directories(cfg.out_dir);
  const auto comment = comment_line(s, cfg);
  const auto& res = run.result;

  {
    auto header = std::vector<std::string>{"t", "mode", "cell"};
    for (auto& z : z_header(part)) header.push_back(z);
    header.push_back("p");
    CsvWriter csv(cfg.out_dir / "density.csv", comment, header);
    for (const auto& snap : res.snapshots)
      for (std::size_t c = 0; c < part.size(); ++c) {
        csv << snap.t;
        write_cell(csv, part, c);
        csv << snap.p[c];
        csv.end_row();
      }
  }
  double worst_rate = 0.0;
  {
    CsvWriter csv(cfg.out_dir / "mass.csv", comment, {"t", "mass", "drift"});
    for (std::size_t k = 0; k < res.snapshots.size(); ++k) {
      const double drift = res.mass[k] - res.mass[0];
      csv << res.snapshots[k].t << res.mass[k] << drift;
      csv.end_row();
      if (res.snapshots[k].t > 0.0) worst_rate = std::max(worst_rate, std::abs(drift) / res.snapshots[k].t);
    }
  }
  Json j;
  j["command"] = "solve";
  j["scenario"] = s.name;
  j["initial"] = s.mu0.name;
  j["seed"] = cfg.seed;
  j["params"] = s.params;
  j["solver"] = std::string(to_string(s.solver));
  j["dt"] = res.dt;
  j["stability_bound"] = res.bound;
  j["steps"] = res.steps;
  j["mass_drift_per_time"] = worst_rate;
  if (run.thermostat) {
    const auto& th = *run.thermostat;
    CsvWriter csv(cfg.out_dir / "flux.csv", comment, {"t", "face", "j_out"});
    for (const auto& f : th.flux) {
      csv << f.t << static_cast<long long>(f.face) << f.j_out;
      csv.end_row();
    }
    double guard = 0.0, mismatch = 0.0;
    for (double v : th.guard_values) guard = std::max(guard, std::abs(v));
    for (std::size_t k = 0; k < th.extracted.size(); ++k)
      mismatch = std::max(mismatch, std::abs(th.extracted[k] - th.injected[k]));
    j["thermostat"] = {{"max_guard_density", guard},
                       {"max_flux_mismatch", mismatch},
                       {"clipped", th.clipped}};
  }
  write_json(cfg.out_dir / "summary.json", j);
  timer.report("solve total");
  return kExitOk;
}

// ---------------------------------------------------------------- compare

int run_compare(const RunConfig& cfg) {
  Timer timer(cfg.timing);
  const auto s = load_scenario(cfg);
  const auto& part = *s.partition;
  if (s.solver == SolverKind::none) throw Unsupported("scenario " + s.name + " has no grid solver to compare with");
  const auto times = law_times(s);
  const auto run = run_solver(s, cfg, times, s.t_end);
  timer.report("solve");
  const auto summary = run_ensemble(s, cfg, times);
  timer.report("ensemble");
  const auto law = estimate_law(summary, s.partition, times);
  std::filesystem::create_directories(cfg.out_dir);
  CsvWriter csv(cfg.out_dir / "compare.csv", comment_line(s, cfg), {"t", "mode", "l1", "mass_mc", "mass_pde"});
  for (std::size_t k = 0; k < times.size(); ++k) {
    const auto mc = law.masses(k);
    const auto pde = run.result.snapshots[k].masses();
    const auto mm = mode_marginals(part, mc);
    const auto mp = mode_marginals(part, pde);
    for (std::size_t q = 0; q < part.mode_count(); ++q) {
      csv << times[k] << static_cast<long long>(q) << l1_distance(mc, pde, part, static_cast<int>(q)) << mm[q] << mp[q];
      csv.end_row();
    }
  }
  timer.report("compare total");
  return kExitOk;
}

// ---------------------------------------------------------------- entry point

int main(int argc, char** argv) {
  CLI::App app{"Simulation and grid solvers for general stochastic hybrid systems"};
  app.require_subcommand(1);
  RunConfig cfg;
  std::string config_file, scenario, out;
  std::uint64_t seed = 0;
  std::size_t paths = 0, grid = 0, dump = 0;
  double dt = 0.0, t_end = 0.0, bin = 0.0;
  std::vector<std::string> sets, tols;
  int threads = 0;
  bool timing = false;

  struct Flags {
    CLI::Option *config, *scenario, *seed, *paths, *dt, *grid, *t_end, *bin, *out, *threads;
  };
  std::map<std::string, Flags> flags;
  const std::pair<const char*, const char*> commands[] = {
      {"simulate", "Monte Carlo ensemble: laws, jump intensities, trajectories"},
      {"solve", "Grid FPK solver: densities, mass, guard fluxes"},
      {"verify", "Cross-checks with pass/fail report (exit 1 on failure)"},
      {"compare", "Per-mode L1 table of ensemble vs grid solver"}};
  for (const auto& [name, about] : commands) {
    auto* sub = app.add_subcommand(name, about);
    Flags f{};
    f.config = sub->add_option("--config", config_file, "JSON config file");
    f.scenario = sub->add_option("--scenario", scenario, "Catalog scenario name");
    f.seed = sub->add_option("--seed", seed, "Master seed (64-bit unsigned)");
    f.paths = sub->add_option("--paths", paths, "Number of Monte Carlo paths");
    f.dt = sub->add_option("--dt", dt, "Time step");
    f.grid = sub->add_option("--grid", grid, "Grid cells (scenario specific)");
    f.t_end = sub->add_option("--t-end", t_end, "Final time");
    f.bin = sub->add_option("--bin", bin, "Width of the intensity / law time bins");
    f.out = sub->add_option("--out", out, "Output directory");
    sub->add_option("--set", sets, "Parameter override key=value (repeatable)");
    sub->add_option("--tol", tols, "Tolerance override name=value (repeatable)");
    f.threads = sub->add_option("--threads", threads, "Worker threads (0: runtime default)");
    sub->add_flag("--timing", timing, "Print timings on standard error");
    if (std::string(name) == "simulate") sub->add_option("--dump-paths", dump, "Write the first N paths");
    flags[name] = f;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    cfg.command = app.get_subcommands().front()->get_name();
    const auto& f = flags.at(cfg.command);
    if (const char* env = std::getenv("GSHS_OUT_DIR"); env && *env) cfg.out_dir = env;
    else cfg.out_dir = "gshs-out";
    if (f.config->count()) apply_config_file(config_file, cfg);
    if (f.scenario->count()) cfg.scenario = scenario;
    if (f.seed->count()) cfg.seed = seed;
    if (f.out->count()) cfg.out_dir = out;
    if (f.threads->count()) cfg.threads = threads;
    if (f.paths->count()) cfg.overrides["paths"] = std::to_string(paths);
    if (f.dt->count()) cfg.overrides["dt"] = fmt(dt);
    if (f.grid->count()) cfg.overrides["grid"] = std::to_string(grid);
    if (f.t_end->count()) cfg.overrides["t_end"] = fmt(t_end);
    if (f.bin->count()) cfg.overrides["bin"] = fmt(bin);
    auto split = [](const std::string& kv, const char* what) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos || eq == 0) throw ValidationError(what, "expected key=value, got '" + kv + "'");
      return std::pair{kv.substr(0, eq), kv.substr(eq + 1)};
    };
    for (const auto& kv : sets) {
      auto [k, v] = split(kv, "--set");
      cfg.overrides[k] = v;
    }
    for (const auto& kv : tols) {
      auto [k, v] = split(kv, "--tol");
      try {
        std::size_t used = 0;
        cfg.tolerances[k] = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
      } catch (const std::logic_error&) {
        throw ValidationError("tolerances." + k, "not a number: '" + v + "'");
      }
    }
    cfg.dump_paths = dump > 0 ? dump : cfg.dump_paths;
    cfg.timing = timing;
    validate_config(cfg);
    if (cfg.threads > 0) omp_set_num_threads(cfg.threads);

    if (cfg.command == "simulate") return run_simulate(cfg);
    if (cfg.command == "solve") return run_solve(cfg);
    if (cfg.command == "verify") return run_verify(cfg);
    return run_compare(cfg);
  } catch (const ValidationError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const StabilityError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const Unsupported& e) {
    std::cerr << "unsupported: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace gshs::cli
