#pragma once

#include <cmath>
#include <cstdint>
#include <span>

#include <Eigen/Dense>

#include "zanim/errors.hpp"
#include "zanim/numerics.hpp"
#include "zanim/rng.hpp"

namespace zanim {

using ZMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

// log of sum_j z_ij f_ij exp(u_ij) for row i; u may be empty (u = 0).
inline double log_row_rate(const ZMatrix& z, const Eigen::MatrixXd& log_f, const Eigen::MatrixXd& u, Eigen::Index i) {
  double m = kNegInf;
  const bool has_u = u.size() > 0;
  for (Eigen::Index j = 0; j < z.cols(); ++j)
    if (z(i, j)) m = std::max(m, log_f(i, j) + (has_u ? u(i, j) : 0.0));
  if (m == kNegInf) return m;
  double s = 0.0;
  for (Eigen::Index j = 0; j < z.cols(); ++j)
    if (z(i, j)) s += std::exp(log_f(i, j) + (has_u ? u(i, j) : 0.0) - m);
  return m + std::log(s);
}

// phi_i ~ Gamma(N_i, sum_j z_ij f_ij exp(u_ij)); rows with N_i = 0 get phi_i = 0.
template <class G>
void update_phi(std::span<const int> totals, const ZMatrix& z, const Eigen::MatrixXd& log_f,
                const Eigen::MatrixXd& u, Eigen::VectorXd& phi, G& rng) {
  const Eigen::Index n = z.rows();
  phi.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (totals[i] == 0) {
      phi(i) = 0.0;
      continue;
    }
    const double lr = log_row_rate(z, log_f, u, i);
    if (lr == kNegInf) throw NumericError("row " + std::to_string(i) + " has a positive total but no present category");
    phi(i) = std::exp(log_gamma_variate(rng, totals[i]) - std::max(lr, std::log(kTiny)));
  }
}

// Probability that z_ij = 1 given y_ij = 0.
inline double presence_probability(double phi, double log_f, double u, double f0) {
  const double l1 = log_norm_cdf(-f0) - phi * std::exp(log_f + u);
  const double l0 = log_norm_cdf(f0);
  return std::exp(l1 - log_add_exp(l0, l1));
}

// z_ij = 1 when y_ij > 0, otherwise Bernoulli(presence_probability). With
// use_data = false the counts are ignored and z ~ Bernoulli(1 - Phi(f0)).
template <class G>
void update_z(Eigen::Index j, const Eigen::MatrixXi& y, const Eigen::VectorXd& phi, const Eigen::MatrixXd& log_f,
              const Eigen::MatrixXd& u, std::span<const double> f0, ZMatrix& z, G& rng, bool use_data = true) {
  const bool has_u = u.size() > 0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    if (!use_data) {
      z(i, j) = bernoulli(rng, norm_cdf(-f0[i]));
    } else if (y(i, j) > 0) {
      z(i, j) = 1;
    } else {
      z(i, j) = bernoulli(rng, presence_probability(phi(i), log_f(i, j), has_u ? u(i, j) : 0.0, f0[i]));
    }
  }
}

// w_ij ~ N(f0, 1) truncated to (-inf, 0] when z = 1 and to [0, inf) when z = 0.
template <class G>
void update_w(Eigen::Index j, const ZMatrix& z, std::span<const double> f0, std::span<double> w, G& rng) {
  for (Eigen::Index i = 0; i < z.rows(); ++i)
    w[i] = z(i, j) ? normal_negative(rng, f0[i]) : normal_positive(rng, f0[i]);
}

}  // namespace zanim
