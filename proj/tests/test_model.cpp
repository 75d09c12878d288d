#include <gtest/gtest.h>

#include <cmath>

#include <Eigen/Eigenvalues>

#include "gshs/model.hpp"
#include "gshs/scenarios.hpp"

using namespace gshs;

namespace {

ModeSpec line_mode(int id, double lo, double hi) {
  ModeSpec m;
  m.id = id;
  m.dim = 1;
  m.box = {{lo, hi}};
  return m;
}

// 1-D model dz = drift(z) dt + sigma dB on R with no jumps.
GshsModel diffusion_1d(std::function<double(double)> drift, double sigma) {
  GshsModel m;
  m.modes = {line_mode(0, -kInf, kInf)};
  m.noise_count = 1;
  m.drift = [drift](int, std::span<const double> z, std::span<double> out) { out[0] = drift(z[0]); };
  m.noise = [sigma](int, std::span<const double>, std::span<double> out) { out[0] = sigma; };
  m.rate = [](int, std::span<const double>) { return 0.0; };
  m.rate_bound = {0.0};
  m.reset = DeterministicMap{[](const HybridState& x) { return x; }, [](const HybridState& x) {
                               return std::vector<HybridState>{x};
                             },
                             [](const HybridState&) { return 1.0; }};
  return m;
}

GshsModel two_axis(std::vector<std::array<double, 2>> fields) {
  GshsModel m;
  ModeSpec mode;
  mode.dim = 2;
  mode.box = {{-kInf, kInf}, {-kInf, kInf}};
  m.modes = {mode};
  m.noise_count = fields.size();
  m.drift = [](int, std::span<const double>, std::span<double> out) { out[0] = out[1] = 0.0; };
  m.noise = [fields](int, std::span<const double>, std::span<double> out) {
    for (std::size_t l = 0; l < fields.size(); ++l) {
      out[l * 2] = fields[l][0];
      out[l * 2 + 1] = fields[l][1];
    }
  };
  m.rate = [](int, std::span<const double>) { return 0.0; };
  m.rate_bound = {0.0};
  m.reset = DeterministicMap{[](const HybridState& x) { return x; }, {}, {}};
  return m;
}

ScalarField power(int k) {
  ScalarField f;
  f.value = [k](int, std::span<const double> z) { return std::pow(z[0], k); };
  f.gradient = [k](int, std::span<const double> z, std::span<double> g) { g[0] = k * std::pow(z[0], k - 1); };
  f.hessian = [k](int, std::span<const double> z, std::span<double> h) {
    h[0] = k < 2 ? 0.0 : k * (k - 1) * std::pow(z[0], k - 2);
  };
  return f;
}

GshsModel mode_switch_pair() {
  GshsModel m;
  m.modes = {line_mode(0, -kInf, kInf), line_mode(1, -kInf, kInf)};
  m.noise_count = 0;
  m.drift = [](int, std::span<const double>, std::span<double> out) { out[0] = 0.0; };
  m.noise = [](int, std::span<const double>, std::span<double>) {};
  m.rate = [](int, std::span<const double>) { return 1.0; };
  m.rate_bound = {1.0, 1.0};
  m.reset = ModeSwitch{[](int from, int to, std::span<const double>) { return from != to ? 1.0 : 0.0; }};
  return m;
}

}  // namespace

TEST(DiffusionMatrix, SingleField) {
  const auto m = diffusion_1d([](double) { return 0.0; }, 0.7);
  const auto a = diffusion_matrix(m, HybridState{0, {0.3}});
  ASSERT_EQ(a.rows(), 1);
  EXPECT_NEAR(a(0, 0), 0.49, 1e-15);
}

TEST(DiffusionMatrix, CoordinateFieldsGiveIdentity) {
  const auto m = two_axis({{1.0, 0.0}, {0.0, 1.0}});
  EXPECT_TRUE(diffusion_matrix(m, HybridState{0, {0.0, 0.0}}).isApprox(Eigen::Matrix2d::Identity()));
}

TEST(DiffusionMatrix, RankOneField) {
  const auto m = two_axis({{1.0, 1.0}});
  const Eigen::MatrixXd a = diffusion_matrix(m, HybridState{0, {0.0, 0.0}});
  EXPECT_TRUE(a.isApprox(Eigen::Matrix2d::Ones()));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
  EXPECT_NEAR(es.eigenvalues()[0], 0.0, 1e-14);
  EXPECT_NEAR(es.eigenvalues()[1], 2.0, 1e-14);
}

TEST(DiffusionMatrix, SymmetricPsdOnRandomPoints) {
  const auto s = build("switching-ou");
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  for (int k = 0; k < 200; ++k) {
    const auto a = diffusion_matrix(s.model, HybridState{k % 2, {u(rng)}});
    EXPECT_TRUE(a.isApprox(a.transpose()));
    EXPECT_GE(a.minCoeff(), 0.0);
  }
}

TEST(DiffusionMatrix, EmptyOnDiscreteMode) {
  const auto s = build("ctmc2");
  EXPECT_EQ(diffusion_matrix(s.model, HybridState{0, {}}).size(), 0);
}

TEST(Generator, PureAdvection) {
  const auto m = diffusion_1d([](double) { return 2.5; }, 0.0);
  EXPECT_DOUBLE_EQ(generator_apply(m, power(1), HybridState{0, {0.3}}), 2.5);
}

TEST(Generator, PureDiffusionOfSquare) {
  const auto m = diffusion_1d([](double) { return 0.0; }, 0.6);
  EXPECT_NEAR(generator_apply(m, power(2), HybridState{0, {1.7}}), 0.36, 1e-14);
}

TEST(Generator, OrnsteinUhlenbeckSquareVanishesAtOne) {
  const auto m = diffusion_1d([](double z) { return -z; }, std::sqrt(2.0));
  EXPECT_NEAR(generator_apply(m, power(2), HybridState{0, {1.0}}), 0.0, 1e-14);
  EXPECT_NEAR(generator_apply_fd(m, power(2), HybridState{0, {1.0}}), 0.0, 1e-6);
}

TEST(Generator, ZeroOnDiscreteModes) {
  const auto s = build("ctmc2");
  ScalarField one;
  one.value = [](int, std::span<const double>) { return 1.0; };
  EXPECT_EQ(generator_apply(s.model, one, HybridState{1, {}}), 0.0);
}

TEST(Generator, FiniteDifferencesConvergeAtSecondOrder) {
  const auto m = diffusion_1d([](double z) { return 1.0 - z; }, 0.8);
  const HybridState x{0, {0.7}};
  const double exact = generator_apply(m, power(4), x);
  const double e1 = std::abs(generator_apply_fd(m, power(4), x, 1e-2) - exact);
  const double e2 = std::abs(generator_apply_fd(m, power(4), x, 5e-3) - exact);
  EXPECT_GT(e1, 0.0);
  EXPECT_NEAR(e1 / e2, 4.0, 0.2);
}

TEST(ResetSample, ConveyorReturnsToZero) {
  const auto s = build("conveyor");
  Rng rng(1);
  for (int k = 0; k < 10; ++k) EXPECT_EQ(reset_sample(s.model, HybridState{0, {1.0}}, rng), (HybridState{0, {0.0}}));
}

TEST(ResetSample, ThermostatSwitchesModeAtSamePoint) {
  const auto s = build("thermostat-1d");
  const double z_min = s.params.at("z_min");
  Rng rng(1);
  EXPECT_EQ(reset_sample(s.model, HybridState{0, {z_min}}, rng), (HybridState{1, {z_min}}));
}

TEST(ResetSample, ModeSwitchFlipsMode) {
  const auto m = mode_switch_pair();
  Rng rng(5);
  EXPECT_EQ(reset_sample(m, HybridState{0, {0.4}}, rng), (HybridState{1, {0.4}}));
  EXPECT_EQ(reset_sample(m, HybridState{1, {0.4}}, rng), (HybridState{0, {0.4}}));
}

TEST(ResetSample, ModeSwitchFrequenciesPassChiSquare) {
  const auto s = build("ctmc-n");
  const auto& q = *s.generator;
  const auto n = q.rows();
  Rng rng(11);
  std::vector<double> hits(static_cast<std::size_t>(n), 0.0);
  const int draws = 10000;
  for (int k = 0; k < draws; ++k) hits[static_cast<std::size_t>(reset_sample(s.model, HybridState{0, {}}, rng).q)] += 1;
  const double out = -q(0, 0);
  double chi2 = 0.0;
  for (Eigen::Index j = 1; j < n; ++j) {
    const double expected = draws * q(0, j) / out;
    chi2 += std::pow(hits[static_cast<std::size_t>(j)] - expected, 2) / expected;
  }
  EXPECT_EQ(hits[0], 0.0);
  // 1% critical value of chi-square with n - 2 = 3 degrees of freedom.
  EXPECT_LT(chi2, 11.345);
}

TEST(ResetSample, DensityWithoutSamplerIsUnsupported) {
  GshsModel m = diffusion_1d([](double) { return 0.0; }, 1.0);
  m.reset = DensityKernel{[](const HybridState&, const HybridState&) { return 1.0; }, {}};
  Rng rng(1);
  EXPECT_THROW(reset_sample(m, HybridState{0, {0.0}}, rng), Unsupported);
}

TEST(DualApply, ModeSwitchSwapsValues) {
  const auto m = mode_switch_pair();
  auto part = std::make_shared<Partition>(
      std::vector<ModeGrid>{ModeGrid{{4}, {{0.0, 1.0}}}, ModeGrid{{4}, {{0.0, 1.0}}}});
  GridField g{part, {0, 0, 0, 0, 1, 1, 1, 1}};
  EXPECT_DOUBLE_EQ(dual_apply(m, g, HybridState{0, {0.3}}), 1.0);
  EXPECT_DOUBLE_EQ(dual_apply(m, g, HybridState{1, {0.3}}), 0.0);
}

TEST(DualApply, HalvingMapDoublesConstant) {
  GshsModel m = diffusion_1d([](double) { return 0.0; }, 0.0);
  m.reset = DeterministicMap{[](const HybridState& x) { return HybridState{0, {x.z[0] / 2}}; },
                             [](const HybridState& y) { return std::vector<HybridState>{{0, {2 * y.z[0]}}}; },
                             [](const HybridState&) { return 0.5; }};
  auto part = std::make_shared<Partition>(std::vector<ModeGrid>{ModeGrid{{20}, {{-4.0, 4.0}}}});
  GridField g{part, std::vector<double>(20, 1.0)};
  EXPECT_DOUBLE_EQ(dual_apply(m, g, HybridState{0, {0.7}}), 2.0);
}

TEST(DualApply, IdentityResetReturnsField) {
  const auto m = diffusion_1d([](double) { return 0.0; }, 0.0);
  auto part = std::make_shared<Partition>(std::vector<ModeGrid>{ModeGrid{{10}, {{0.0, 1.0}}}});
  GridField g{part, {}};
  for (std::size_t c = 0; c < 10; ++c) g.values.push_back(std::sin(part->center(c)[0]));
  for (std::size_t c = 0; c < 10; ++c)
    EXPECT_NEAR(dual_apply(m, g, HybridState{0, part->center(c)}), g.values[c], 1e-15);
}

TEST(DualApply, MapWithoutInverseIsUnsupported) {
  const auto s = build("conveyor");
  auto part = s.partition;
  GridField g{part, std::vector<double>(part->size(), 1.0)};
  EXPECT_THROW(dual_apply(s.model, g, HybridState{0, {0.0}}), Unsupported);
}

TEST(DualApply, DensityKernelDualityOnCellPairs) {
  // nu(dx) K(x, dy) = nu(dy) K*(y, dx): compare both sides cell pairwise.
  const auto s = build("pure-jump-continuous");
  const auto& part = *s.partition;
  const auto& dk = std::get<DensityKernel>(s.model.reset);
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<std::size_t> pick(part.size() / 4, 3 * part.size() / 4);
  for (int k = 0; k < 20; ++k) {
    const std::size_t a = pick(rng), b = pick(rng);
    GridField indicator{s.partition, std::vector<double>(part.size(), 0.0)};
    indicator.values[a] = 1.0;
    // Mass moving from cell a to cell b through K, seen from b via K*.
    const double forward = part.cell_volume(a) * dk.density({0, part.center(a)}, {0, part.center(b)}) *
                           part.cell_volume(b);
    const double backward = part.cell_volume(b) * dual_apply(s.model, indicator, {0, part.center(b)});
    EXPECT_NEAR(forward, backward, 1e-14);
  }
}

TEST(KernelApply, ConstantPreserved) {
  const auto s = build("pure-jump-continuous");
  ScalarField one;
  one.value = [](int, std::span<const double>) { return 1.0; };
  EXPECT_NEAR(kernel_apply(s.model, one, HybridState{0, {0.3}}, s.partition.get()), 1.0, 1e-14);
  EXPECT_THROW(kernel_apply(s.model, one, HybridState{0, {0.3}}), Unsupported);
}

TEST(Validate, RejectsKernelRowsNotSummingToOne) {
  auto m = mode_switch_pair();
  m.reset = ModeSwitch{[](int from, int to, std::span<const double>) { return from != to ? 0.5 : 0.0; }};
  EXPECT_THROW(validate(m), ValidationError);
}

TEST(Validate, RejectsResetIntoGuard) {
  auto s = build("conveyor");
  s.model.reset = DeterministicMap{[](const HybridState&) { return HybridState{0, {1.0}}; }, {}, {}};
  EXPECT_THROW(validate(s.model), ValidationError);
}

TEST(Validate, RejectsNegativeRate) {
  auto m = mode_switch_pair();
  m.rate = [](int, std::span<const double>) { return -1.0; };
  EXPECT_THROW(validate(m), ValidationError);
}
