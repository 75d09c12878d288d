#pragma once

#include <vector>

#include <Eigen/Dense>

#include "gshs/state_space.hpp"

/// Closed-form reference solutions used by the verification suites.
namespace gshs::oracle {

/// Law at time t of a CTMC with generator Q (row = from): p0^T exp(Q t).
Eigen::VectorXd ctmc_distribution(const Eigen::MatrixXd& q, const Eigen::VectorXd& p0, double t);
/// Its time derivative Q^T p(t).
Eigen::VectorXd ctmc_derivative(const Eigen::MatrixXd& q, const Eigen::VectorXd& p0, double t);

/// P(mode 0 at t) of a two-state chain with rates l01, l10 started with P(mode 0) = p0.
double two_state_marginal(double l01, double l10, double p0, double t);

struct Gaussian {
  double mean = 0.0;
  double sd = 1.0;
};

/// Marginal at t of dZ = -theta (Z - mu) dt + sigma dB with Z_0 ~ N(m0, s0^2).
Gaussian ou_marginal(double theta, double mu, double sigma, Gaussian z0, double t);

double normal_cdf(double x);
double normal_pdf(double x, Gaussian g);
/// P(a < Z <= b) for Z ~ g.
double normal_interval_mass(double a, double b, Gaussian g);
/// Exact cell masses of `weight * N(g)` on the 1-D mode q of a partition; zero
/// on every other cell.
std::vector<double> normal_cell_masses(const Partition& partition, int q, Gaussian g, double weight = 1.0);

}  // namespace gshs::oracle
