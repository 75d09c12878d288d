#include "gshs/oracles.hpp"

#include <cmath>
#include <numbers>

#include <unsupported/Eigen/MatrixFunctions>

namespace gshs::oracle {

Eigen::VectorXd ctmc_distribution(const Eigen::MatrixXd& q, const Eigen::VectorXd& p0, double t) {
  const Eigen::MatrixXd e = (q.transpose() * t).exp();
  return e * p0;
}

Eigen::VectorXd ctmc_derivative(const Eigen::MatrixXd& q, const Eigen::VectorXd& p0, double t) {
  return q.transpose() * ctmc_distribution(q, p0, t);
}

double two_state_marginal(double l01, double l10, double p0, double t) {
  const double s = l01 + l10;
  if (s == 0.0) return p0;
  const double eq = l10 / s;
  return eq + (p0 - eq) * std::exp(-s * t);
}

Gaussian ou_marginal(double theta, double mu, double sigma, Gaussian z0, double t) {
  const double e = std::exp(-theta * t);
  const double var = z0.sd * z0.sd * e * e + sigma * sigma / (2.0 * theta) * (1.0 - e * e);
  return {mu + (z0.mean - mu) * e, std::sqrt(var)};
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double normal_pdf(double x, Gaussian g) {
  const double u = (x - g.mean) / g.sd;
  return std::exp(-0.5 * u * u) / (g.sd * std::sqrt(2.0 * std::numbers::pi));
}

double normal_interval_mass(double a, double b, Gaussian g) {
  const double ua = (a - g.mean) / g.sd;
  const double ub = (b - g.mean) / g.sd;
  // Difference of upper tails is more accurate on the right side.
  if (ua > 0.0) return 0.5 * (std::erfc(ua / std::numbers::sqrt2) - std::erfc(ub / std::numbers::sqrt2));
  return normal_cdf(ub) - normal_cdf(ua);
}

std::vector<double> normal_cell_masses(const Partition& partition, int q, Gaussian g, double weight) {
  if (partition.dim(q) != 1) throw Error("normal cell masses need a one-dimensional mode");
  std::vector<double> m(partition.size(), 0.0);
  const double h = partition.spacing(q, 0);
  const double lo = partition.grid(q).truncation[0].lo;
  for (std::size_t k = 0; k < partition.mode_cells(q); ++k) {
    const double a = lo + static_cast<double>(k) * h;
    m[partition.offset(q) + k] = weight * normal_interval_mass(a, a + h, g);
  }
  return m;
}

}  // namespace gshs::oracle
