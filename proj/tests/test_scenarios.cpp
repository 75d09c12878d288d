#include <gtest/gtest.h>

#include "gshs/scenarios.hpp"
#include "gshs/simulator.hpp"

using namespace gshs;

TEST(Catalog, ListsEveryExample) {
  const std::vector<std::string> expected{"conveyor",     "ctmc2",           "ctmc-n",       "pure-jump-continuous",
                                          "switching-ou", "hespanha-halving", "thermostat-1d"};
  auto names = catalog();
  std::sort(names.begin(), names.end());
  auto want = expected;
  std::sort(want.begin(), want.end());
  EXPECT_EQ(names, want);
}

TEST(Catalog, EveryEntryValidatesAndSimulates) {
  for (const auto& name : catalog()) {
    SCOPED_TRACE(name);
    const auto s = build(name);
    EXPECT_NO_THROW(validate(s.model));
    EnsembleOptions opt;
    opt.n_paths = 10;
    opt.t_end = s.t_end;
    opt.dt = s.dt;
    opt.master_seed = 1;
    opt.observe_times = {0.0, s.t_end};
    const auto sum = simulate_ensemble(s.model, s.mu0.sample, opt);
    EXPECT_EQ(sum.count(PathStatus::completed), 10u);
    // The initial law gives no mass to the guard.
    Rng rng(2);
    for (int k = 0; k < 1000; ++k) EXPECT_FALSE(in_guard(s.model, s.mu0.sample(rng), 1e-12));
    // Cell masses of the initial law form a probability vector.
    const auto m = s.mu0.masses(*s.partition);
    double total = 0.0;
    for (double v : m) {
      EXPECT_GE(v, 0.0);
      total += v;
    }
    EXPECT_NEAR(total, 1.0, 1e-9);
  }
}

TEST(Build, ConveyorModel) {
  const auto s = build("conveyor", {{"v", "1"}, {"initial", "uniform"}});
  ASSERT_EQ(s.model.modes.size(), 1u);
  const auto& mode = s.model.modes[0];
  EXPECT_EQ(mode.box[0].lo, 0.0);
  EXPECT_EQ(mode.box[0].hi, 1.0);
  ASSERT_EQ(mode.guard_faces.size(), 1u);
  EXPECT_EQ(mode.guard_faces[0].side, Side::upper);
  Rng rng(1);
  EXPECT_EQ(reset_sample(s.model, HybridState{0, {1.0}}, rng), (HybridState{0, {0.0}}));
  EXPECT_EQ(s.mu0.name, "uniform");
}

TEST(Build, ThermostatModel) {
  const auto s = build("thermostat-1d", {{"z_min", "-1"}, {"z_max", "1"}});
  ASSERT_EQ(s.model.modes.size(), 2u);
  EXPECT_EQ(s.model.modes[0].box[0].lo, -1.0);
  EXPECT_EQ(s.model.modes[0].guard_faces[0].side, Side::lower);
  EXPECT_EQ(s.model.modes[1].box[0].hi, 1.0);
  EXPECT_EQ(s.model.modes[1].guard_faces[0].side, Side::upper);
  Rng rng(1);
  EXPECT_EQ(reset_sample(s.model, HybridState{1, {1.0}}, rng), (HybridState{0, {1.0}}));
  EXPECT_EQ(s.solver, SolverKind::thermostat);
  // Thresholds sit on cell faces of both grids.
  const auto& part = *s.partition;
  for (int q = 0; q < 2; ++q) {
    const auto& tr = part.grid(q).truncation[0];
    const double h = part.spacing(q, 0);
    EXPECT_NEAR(std::remainder(-1.0 - tr.lo, h), 0.0, 1e-12);
    EXPECT_NEAR(std::remainder(1.0 - tr.lo, h), 0.0, 1e-12);
  }
}

TEST(Build, SmallestChain) {
  const auto s = build("ctmc2", {{"lambda", "1"}});
  ASSERT_EQ(s.model.modes.size(), 2u);
  EXPECT_TRUE(s.model.modes[0].discrete());
  EXPECT_TRUE(std::holds_alternative<ModeSwitch>(s.model.reset));
  ASSERT_TRUE(s.generator.has_value());
  EXPECT_DOUBLE_EQ((*s.generator)(0, 1), 1.0);
  EXPECT_DOUBLE_EQ((*s.generator)(1, 0), 1.0);
}

TEST(Build, ResolutionOverrides) {
  const auto s = build("switching-ou", {{"paths", "123"}, {"dt", "0.002"}, {"t_end", "1"}, {"bin", "0.2"}, {"grid", "60"}});
  EXPECT_EQ(s.n_paths, 123u);
  EXPECT_DOUBLE_EQ(s.dt, 0.002);
  EXPECT_DOUBLE_EQ(s.t_end, 1.0);
  EXPECT_DOUBLE_EQ(s.bin_width, 0.2);
  EXPECT_EQ(s.partition->size(), 120u);
}

TEST(Build, ErrorsNameTheField) {
  auto field_of = [](const std::string& name, const Overrides& ov) {
    try {
      build(name, ov);
    } catch (const ValidationError& e) {
      return e.field();
    }
    return std::string("no error");
  };
  EXPECT_EQ(field_of("no-such-scenario", {}), "scenario");
  EXPECT_EQ(field_of("conveyor", {{"speed", "1"}}), "speed");
  EXPECT_EQ(field_of("conveyor", {{"v", "fast"}}), "v");
  EXPECT_EQ(field_of("conveyor", {{"initial", "gaussian"}}), "initial");
  EXPECT_EQ(field_of("ctmc2", {{"l01", "-1"}}).rfind("l01", 0), 0u);
  EXPECT_EQ(field_of("conveyor", {{"bin", "0.0025"}}), "bin");
}
