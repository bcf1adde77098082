#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include "zanim/augmentation.hpp"
#include "zanim/errors.hpp"
#include "zanim/numerics.hpp"
#include "zanim/rng.hpp"
#include "zanim/sampler.hpp"

namespace zanim {

struct SimulatedData {
  CountData data;
  Eigen::MatrixXd theta;  // true compositional probabilities
  Eigen::MatrixXd zeta;   // true structural-zero probabilities
  ZMatrix z;              // realized presence indicators
  // Covariates driving each category's theta and zeta (scenario 2 only).
  std::vector<std::array<int, 2>> theta_covariates, zeta_covariates;
};

// Cubic B-spline basis on [lo, hi] with equally spaced interior knots and
// repeated boundary knots. Returns all n_interior + 4 functions.
inline Eigen::MatrixXd cubic_bspline_basis(std::span<const double> x, int n_interior, double lo, double hi) {
  std::vector<double> knots(4, lo);
  for (int k = 1; k <= n_interior; ++k) knots.push_back(lo + (hi - lo) * k / (n_interior + 1.0));
  knots.insert(knots.end(), 4, hi);
  const int nb = n_interior + 4;
  const int nk = static_cast<int>(knots.size());
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(x.size()), nb);
  for (std::size_t r = 0; r < x.size(); ++r) {
    const double v = x[r];
    std::vector<double> b(nk - 1, 0.0);
    for (int i = 0; i < nk - 1; ++i)
      if (knots[i] < knots[i + 1] && ((v >= knots[i] && v < knots[i + 1]) || (v == hi && knots[i + 1] == hi)))
        b[i] = 1.0;
    for (int deg = 1; deg <= 3; ++deg)
      for (int i = 0; i < nk - 1 - deg; ++i) {
        double left = 0.0, right = 0.0;
        if (knots[i + deg] > knots[i]) left = (v - knots[i]) / (knots[i + deg] - knots[i]) * b[i];
        if (knots[i + deg + 1] > knots[i + 1])
          right = (knots[i + deg + 1] - v) / (knots[i + deg + 1] - knots[i + 1]) * b[i + 1];
        b[i] = left + right;
      }
    for (int i = 0; i < nb; ++i) out(static_cast<Eigen::Index>(r), i) = b[i];
  }
  return out;
}

struct Scenario1Config {
  int n = 400;
  int min_total = 100;
  int max_total = 500;
  std::vector<double> beta0{0.5, 1.0, 1.5, 2.0};
  std::uint64_t coefficient_seed = 7;
};

// One covariate on a uniform grid over [-1, 1]; log f_j is a cubic B-spline with
// standard-normal coefficients and zeta_j = Phi(sin(2 pi x) + x^2 - beta0_j).
template <class G>
SimulatedData gen_scenario1(const Scenario1Config& cfg, G& rng) {
  require(cfg.n >= 2, "scenario 1 needs at least two rows");
  require(cfg.min_total >= 1 && cfg.max_total >= cfg.min_total, "bad total-count range");
  const int n = cfg.n, d = static_cast<int>(cfg.beta0.size());
  require(d >= 2, "scenario 1 needs at least two categories");
  std::vector<double> x(n);
  for (int i = 0; i < n; ++i) x[i] = -1.0 + 2.0 * i / (n - 1.0);
  // Drop the first function, as a spline basis without intercept does.
  const Eigen::MatrixXd basis = cubic_bspline_basis(x, 3, -1.0, 1.0).rightCols(6);
  Rng crng(cfg.coefficient_seed);
  Eigen::MatrixXd coef(basis.cols(), d);
  for (Eigen::Index k = 0; k < coef.size(); ++k) coef.data()[k] = std_normal(crng);
  const Eigen::MatrixXd log_f = basis * coef;

  SimulatedData sim;
  sim.theta.resize(n, d);
  sim.zeta.resize(n, d);
  sim.z.resize(n, d);
  Eigen::MatrixXi y = Eigen::MatrixXi::Zero(n, d);
  std::uniform_int_distribution<int> total(cfg.min_total, cfg.max_total);
  for (int i = 0; i < n; ++i) {
    const double m = log_f.row(i).maxCoeff();
    double s = 0.0;
    for (int j = 0; j < d; ++j) s += (sim.theta(i, j) = std::exp(log_f(i, j) - m));
    sim.theta.row(i) /= s;
    const double g = std::sin(2.0 * std::numbers::pi * x[i]) + x[i] * x[i];
    for (int j = 0; j < d; ++j) sim.zeta(i, j) = norm_cdf(g - cfg.beta0[j]);
    const int tot = total(rng);
    std::vector<double> w(d, 0.0);
    for (int j = 0; j < d; ++j) {
      sim.z(i, j) = bernoulli(rng, 1.0 - sim.zeta(i, j));
      if (sim.z(i, j)) w[j] = sim.theta(i, j);
    }
    if (sim.z.row(i).cast<int>().sum() == 0) continue;
    const auto c = multinomial(rng, tot, w);
    for (int j = 0; j < d; ++j) y(i, j) = c[j];
  }
  Eigen::MatrixXd xm(n, 1);
  for (int i = 0; i < n; ++i) xm(i, 0) = x[i];
  sim.data = CountData(std::move(y), CovariateMatrix(std::move(xm), {"x"}));
  return sim;
}

struct Scenario2Config {
  int n = 500;
  int d = 20;
  int p = 6;
  int min_total = 1000;
  int max_total = 5000;
  double tau = 0.01;
  double alpha_b0_lo = -2.3, alpha_b0_hi = 2.3;
  double zeta_b0_lo = -0.1, zeta_b0_hi = 1.5;
  double slope_lo = 1.2, slope_hi = 1.8;
  bool shared_covariates = false;  // theta and zeta of a category use the same two covariates
};

// Counts from a multinomial with gamma-perturbed weights z * lambda, not from any
// of the fitted models. The logistic predictor is the presence probability, so the
// structural-zero probability is zeta = 1 - logistic(eta).
template <class G>
SimulatedData gen_scenario2(const Scenario2Config& cfg, G& rng) {
  require(cfg.n >= 1 && cfg.d >= 2 && cfg.p >= 2, "bad scenario 2 dimensions");
  require(cfg.tau > 0.0 && cfg.tau < 1.0, "tau must lie in (0, 1)");
  require(cfg.min_total >= 1 && cfg.max_total >= cfg.min_total, "bad total-count range");
  const int n = cfg.n, d = cfg.d, p = cfg.p;
  Eigen::MatrixXd x(n, p);
  for (Eigen::Index k = 0; k < x.size(); ++k) x.data()[k] = std_normal(rng);

  auto pick_pair = [&] {
    std::uniform_int_distribution<int> u(0, p - 1);
    const int a = u(rng);
    int b = u(rng);
    while (b == a) b = u(rng);
    return std::array<int, 2>{a, b};
  };
  auto slope = [&] {
    const double mag = cfg.slope_lo + (cfg.slope_hi - cfg.slope_lo) * uniform01(rng);
    return bernoulli(rng, 0.5) ? mag : -mag;
  };
  auto predictor = [&](int i, const std::array<int, 2>& c, double b0, double b1) {
    const double x1 = x(i, c[0]), x2 = x(i, c[1]);
    return b0 + b1 * x1 + std::sin(2.0 * std::numbers::pi * x2) + x2 * x2 + x1 * x2;
  };

  SimulatedData sim;
  Eigen::MatrixXd log_alpha(n, d);
  sim.zeta.resize(n, d);
  for (int j = 0; j < d; ++j) {
    const auto cz = pick_pair();
    const auto ca = cfg.shared_covariates ? cz : pick_pair();
    const double bz0 = cfg.zeta_b0_lo + (cfg.zeta_b0_hi - cfg.zeta_b0_lo) * uniform01(rng);
    const double bz1 = slope();
    const double ba0 = cfg.alpha_b0_lo + (cfg.alpha_b0_hi - cfg.alpha_b0_lo) * uniform01(rng);
    const double ba1 = slope();
    sim.zeta_covariates.push_back(cz);
    sim.theta_covariates.push_back(ca);
    for (int i = 0; i < n; ++i) {
      sim.zeta(i, j) = 1.0 / (1.0 + std::exp(predictor(i, cz, bz0, bz1)));
      log_alpha(i, j) = predictor(i, ca, ba0, ba1);
    }
  }
  sim.theta.resize(n, d);
  for (int i = 0; i < n; ++i) {
    const double m = log_alpha.row(i).maxCoeff();
    sim.theta.row(i) = (log_alpha.row(i).array() - m).exp();
    sim.theta.row(i) /= sim.theta.row(i).sum();
  }

  sim.z.resize(n, d);
  Eigen::MatrixXi y(n, d);
  std::uniform_int_distribution<int> total(cfg.min_total, cfg.max_total);
  const double shape_scale = (1.0 - cfg.tau) / cfg.tau;
  for (int i = 0; i < n; ++i) {
    const int tot = total(rng);
    bool any = false;
    while (!any) {
      for (int j = 0; j < d; ++j) {
        sim.z(i, j) = bernoulli(rng, 1.0 - sim.zeta(i, j));
        any = any || sim.z(i, j);
      }
    }
    std::vector<double> w(d, 0.0);
    for (int j = 0; j < d; ++j) {
      const double lam = gamma_rate(rng, shape_scale * std::exp(log_alpha(i, j)), 1.0);
      if (sim.z(i, j)) w[j] = lam;
    }
    double s = 0.0;
    for (double v : w) s += v;
    if (!(s > 0.0)) {
      // Every present category drew a lambda that underflowed; fall back to alpha.
      for (int j = 0; j < d; ++j) w[j] = sim.z(i, j) ? sim.theta(i, j) : 0.0;
    }
    const auto c = multinomial(rng, tot, w);
    for (int j = 0; j < d; ++j) y(i, j) = c[j];
  }
  std::vector<std::string> names;
  for (int k = 0; k < p; ++k) names.push_back("x" + std::to_string(k + 1));
  sim.data = CountData(std::move(y), CovariateMatrix(std::move(x), names));
  return sim;
}

}  // namespace zanim
