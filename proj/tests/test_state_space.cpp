#include <gtest/gtest.h>

#include <numeric>

#include "gshs/scenarios.hpp"
#include "gshs/state_space.hpp"

using namespace gshs;

namespace {

Partition line(double lo, double hi, std::size_t n) { return Partition({ModeGrid{{n}, {{lo, hi}}}}); }

ModeSpec unit_interval() {
  ModeSpec m;
  m.dim = 1;
  m.box = {{0.0, 1.0}};
  m.guard_faces = {GuardFace{0, Side::upper, {}}};
  return m;
}

}  // namespace

TEST(Volume, FullIntervalIsOne) {
  const auto p = line(0.0, 1.0, 10);
  std::vector<std::size_t> all(10);
  std::iota(all.begin(), all.end(), 0);
  EXPECT_DOUBLE_EQ(volume(p, all), 1.0);
}

TEST(Volume, AtomCarriesUnitMass) {
  const Partition p({ModeGrid{}, ModeGrid{}});
  const std::vector<std::size_t> atom{1};
  EXPECT_EQ(p.size(), 2u);
  EXPECT_DOUBLE_EQ(volume(p, atom), 1.0);
}

TEST(Volume, ThreeCellsOfSquareGrid) {
  const Partition p({ModeGrid{{4, 4}, {{0.0, 1.0}, {0.0, 1.0}}}});
  const std::vector<std::size_t> cells{0, 5, 15};
  EXPECT_DOUBLE_EQ(volume(p, cells), 3.0 / 16.0);
}

TEST(Volume, RejectsInvalidCell) {
  const auto p = line(0.0, 1.0, 10);
  const std::vector<std::size_t> bad{10};
  EXPECT_THROW(volume(p, bad), Error);
}

TEST(Volume, CellMassesSumToBoxPlusAtoms) {
  const Partition p({ModeGrid{{3, 5}, {{-1.0, 2.0}, {0.0, 0.5}}}, ModeGrid{}, ModeGrid{{7}, {{0.0, 0.7}}}});
  double total = 0.0;
  for (std::size_t c = 0; c < p.size(); ++c) total += p.cell_volume(c);
  EXPECT_NEAR(total, 3.0 * 0.5 + 1.0 + 0.7, 1e-14);
  EXPECT_NEAR(p.total_volume(), total, 1e-14);
}

TEST(InGuard, ConveyorGuardPoint) {
  const auto s = build("conveyor");
  EXPECT_TRUE(in_guard(s.model, HybridState{0, {1.0}}, 1e-12));
  EXPECT_FALSE(in_guard(s.model, HybridState{0, {0.5}}, 1e-12));
}

TEST(InGuard, ThermostatLowerThreshold) {
  const auto s = build("thermostat-1d");
  const double z_min = s.params.at("z_min");
  EXPECT_TRUE(in_guard(s.model, HybridState{0, {z_min}}, 1e-12));
  EXPECT_FALSE(in_guard(s.model, HybridState{1, {z_min}}, 1e-12));
}

TEST(InGuard, FalseStrictlyInside) {
  const auto m = unit_interval();
  for (double z : {0.0, 0.1, 0.5, 0.999}) {
    const std::vector<double> x{z};
    EXPECT_FALSE(in_guard(m, x, 1e-6)) << z;
  }
  const std::vector<double> edge{1.0 - 1e-7};
  EXPECT_TRUE(in_guard(m, edge, 1e-6));
}

TEST(InGuard, SubRangeRestrictsFace) {
  ModeSpec m;
  m.dim = 2;
  m.box = {{0.0, 1.0}, {0.0, 1.0}};
  m.guard_faces = {GuardFace{0, Side::upper, {{}, {0.0, 0.5}}}};
  const std::vector<double> inside{1.0, 0.25}, outside{1.0, 0.75};
  EXPECT_TRUE(in_guard(m, inside, 1e-12));
  EXPECT_FALSE(in_guard(m, outside, 1e-12));
}

TEST(Locate, InteriorAndEdges) {
  const auto p = line(0.0, 1.0, 10);
  EXPECT_EQ(p.locate(HybridState{0, {0.05}}), 0u);
  EXPECT_EQ(p.locate(HybridState{0, {1.0}}), 9u);
  EXPECT_EQ(p.locate(HybridState{0, {0.0}}), 0u);
  EXPECT_THROW(p.locate(HybridState{0, {1.5}}), EscapedTruncation);
}

TEST(Locate, SharedFaceGoesToLowerCell) {
  const auto p = line(0.0, 1.0, 10);
  EXPECT_EQ(p.locate(HybridState{0, {0.3}}), 2u);
}

TEST(Locate, LeftInverseOfCenter) {
  const Partition p({ModeGrid{{3, 4}, {{0.0, 3.0}, {-2.0, 2.0}}}, ModeGrid{}, ModeGrid{{5}, {{-1.0, 1.0}}}});
  for (std::size_t c = 0; c < p.size(); ++c) {
    const HybridState x{p.mode_of(c), p.center(c)};
    EXPECT_EQ(p.locate(x), c);
  }
}

TEST(Locate, AxisZeroRunsFastest) {
  const Partition p({ModeGrid{{3, 2}, {{0.0, 3.0}, {0.0, 2.0}}}});
  EXPECT_EQ(p.locate(HybridState{0, {1.5, 0.5}}), 1u);
  EXPECT_EQ(p.locate(HybridState{0, {0.5, 1.5}}), 3u);
}

TEST(ModeSpecValidation, RejectsBadBoxes) {
  ModeSpec m = unit_interval();
  m.box = {{1.0, 0.0}};
  EXPECT_THROW(validate_mode(m, "modes[0]"), ValidationError);

  ModeSpec d;
  d.dim = 0;
  d.guard_faces = {GuardFace{}};
  EXPECT_THROW(validate_mode(d, "modes[1]"), ValidationError);

  ModeSpec g = unit_interval();
  g.box = {{0.0, kInf}};
  EXPECT_THROW(validate_mode(g, "modes[2]"), ValidationError);
}

TEST(ModeSpecValidation, ErrorNamesField) {
  ModeSpec m = unit_interval();
  m.box = {{1.0, 0.0}};
  try {
    validate_mode(m, "modes[3]");
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_EQ(e.field().rfind("modes[3]", 0), 0u);
  }
}

TEST(GridField, InterpolatesLinearData) {
  auto p = std::make_shared<Partition>(line(0.0, 1.0, 10));
  GridField g{p, {}};
  for (std::size_t c = 0; c < 10; ++c) g.values.push_back(3.0 * p->center(c)[0]);
  const std::vector<double> z{0.42};
  EXPECT_NEAR(g.interpolate(0, z), 1.26, 1e-12);
  const std::vector<double> edge{0.01};
  EXPECT_NEAR(g.interpolate(0, edge), 0.15, 1e-12);
  const std::vector<double> out{2.0};
  EXPECT_EQ(g.interpolate(0, out), 0.0);
  EXPECT_EQ(g.lookup(0, out), 0.0);
}
