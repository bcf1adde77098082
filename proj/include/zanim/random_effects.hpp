#pragma once

#include <cmath>
#include <numbers>

#include <Eigen/Dense>

#include "zanim/augmentation.hpp"
#include "zanim/errors.hpp"
#include "zanim/numerics.hpp"
#include "zanim/rng.hpp"

namespace zanim {

// Normalized Helmert contrasts: d x (d-1), orthonormal columns summing to zero.
inline Eigen::MatrixXd helmert_basis(int d) {
  require(d >= 2, "random effects need at least two categories");
  Eigen::MatrixXd b = Eigen::MatrixXd::Zero(d, d - 1);
  for (int k = 1; k < d; ++k) {
    const double s = std::sqrt(static_cast<double>(k) * (k + 1));
    for (int r = 0; r < k; ++r) b(r, k - 1) = 1.0 / s;
    b(k, k - 1) = -static_cast<double>(k) / s;
  }
  return b;
}

// Largest q with (p - q)^2 >= p + q.
inline int ledermann_bound(int p) {
  int q = 0;
  while (q + 1 <= p && (p - q - 1) * (p - q - 1) >= p + q + 1) ++q;
  return q;
}

struct FactorHyper {
  double nu = 3.0;
  double a1 = 2.1;
  double a2 = 3.1;
  double a_psi = 1.0;
  double b_psi = 1.0;
};

// Sparse factor model v_i = Gamma eta_i + eps_i, eps_i ~ N(0, diag(psi)), with a
// multiplicative gamma process shrinkage prior on the loadings.
struct FactorState {
  int q = 0;
  FactorHyper hyper;
  Eigen::MatrixXd loadings;  // (d-1) x q
  Eigen::MatrixXd scores;    // n x q
  Eigen::VectorXd psi;       // d-1
  Eigen::MatrixXd rho;       // (d-1) x q local shrinkage
  Eigen::VectorXd varrho;    // q
  Eigen::VectorXd tau;       // cumulative products of varrho

  int dim() const { return static_cast<int>(psi.size()); }

  Eigen::MatrixXd covariance() const {
    Eigen::MatrixXd s = loadings * loadings.transpose();
    s.diagonal() += psi;
    return s;
  }

  void refresh_tau() {
    double c = 1.0;
    for (int h = 0; h < q; ++h) tau(h) = (c *= varrho(h));
  }

  template <class G>
  static FactorState from_prior(int dim, int n, int q, const FactorHyper& hyper, G& rng) {
    require(dim >= 1 && q >= 0, "bad factor dimensions");
    FactorState s;
    s.q = q;
    s.hyper = hyper;
    s.varrho.resize(q);
    s.tau.resize(q);
    for (int h = 0; h < q; ++h) s.varrho(h) = gamma_rate(rng, h == 0 ? hyper.a1 : hyper.a2, 1.0);
    s.refresh_tau();
    s.rho.resize(dim, q);
    s.loadings.resize(dim, q);
    for (int j = 0; j < dim; ++j) {
      for (int h = 0; h < q; ++h) {
        s.rho(j, h) = gamma_rate(rng, 0.5 * hyper.nu, 0.5 * hyper.nu);
        s.loadings(j, h) = std_normal(rng) / std::sqrt(s.rho(j, h) * s.tau(h));
      }
    }
    s.psi.resize(dim);
    for (int j = 0; j < dim; ++j) s.psi(j) = 1.0 / gamma_rate(rng, hyper.a_psi, hyper.b_psi);
    s.scores.resize(n, q);
    for (Eigen::Index i = 0; i < s.scores.size(); ++i) s.scores.data()[i] = std_normal(rng);
    return s;
  }

  // A draw from N(0, Gamma Gamma^T + Psi) without factorizing the covariance.
  template <class G>
  Eigen::VectorXd draw_v(G& rng) const {
    Eigen::VectorXd eta(q), v(dim());
    for (int h = 0; h < q; ++h) eta(h) = std_normal(rng);
    for (int j = 0; j < dim(); ++j) v(j) = std::sqrt(psi(j)) * std_normal(rng);
    if (q > 0) v += loadings * eta;
    return v;
  }
};

// log-likelihood of row i's counts as a function of its random effect u = B v.
inline double random_effect_log_lik(const Eigen::VectorXd& u, Eigen::Index i, const Eigen::MatrixXi& y,
                                    const ZMatrix& z, const Eigen::MatrixXd& log_f, int total) {
  if (total == 0) return 0.0;
  double m = kNegInf, lin = 0.0;
  for (Eigen::Index j = 0; j < u.size(); ++j) {
    lin += y(i, j) * u(j);
    if (z(i, j)) m = std::max(m, log_f(i, j) + u(j));
  }
  double s = 0.0;
  for (Eigen::Index j = 0; j < u.size(); ++j)
    if (z(i, j)) s += std::exp(log_f(i, j) + u(j) - m);
  return lin - total * (m + std::log(s));
}

// One elliptical slice sampling transition for row i of V (n x (d-1)).
// Returns the number of shrinkage steps taken.
template <class G>
int update_v_row(Eigen::Index i, const Eigen::MatrixXi& y, const ZMatrix& z, const Eigen::MatrixXd& log_f,
                 int total, const Eigen::MatrixXd& basis, const FactorState& fs, Eigen::MatrixXd& v, G& rng,
                 bool use_data = true) {
  const Eigen::VectorXd cur = v.row(i).transpose();
  const Eigen::VectorXd nu = fs.draw_v(rng);
  auto loglik = [&](const Eigen::VectorXd& vv) {
    return use_data ? random_effect_log_lik(basis * vv, i, y, z, log_f, total) : 0.0;
  };
  const double log_y = loglik(cur) + std::log(uniform01(rng));
  double angle = 2.0 * std::numbers::pi * uniform01(rng);
  double lo = angle - 2.0 * std::numbers::pi, hi = angle;
  for (int steps = 0; steps < 10000; ++steps) {
    const Eigen::VectorXd prop = cur * std::cos(angle) + nu * std::sin(angle);
    if (loglik(prop) > log_y) {
      v.row(i) = prop.transpose();
      return steps;
    }
    if (angle < 0.0) lo = angle; else hi = angle;
    angle = lo + (hi - lo) * uniform01(rng);
  }
  return -1;
}

namespace detail {

// x ~ N(P^{-1} b, P^{-1}) given the Cholesky factor of the precision P.
template <class G>
Eigen::VectorXd draw_from_precision(const Eigen::LLT<Eigen::MatrixXd>& llt, const Eigen::VectorXd& b, G& rng) {
  Eigen::VectorXd xi(b.size());
  for (Eigen::Index k = 0; k < xi.size(); ++k) xi(k) = std_normal(rng);
  const Eigen::VectorXd mean = llt.solve(b);
  return mean + llt.matrixU().solve(xi);
}

}  // namespace detail

// Rows of Gamma: precision D_j^{-1} + H^T H / psi_j, mean prec^{-1} H^T v^(j) / psi_j.
template <class G>
void update_loadings(const Eigen::MatrixXd& v, FactorState& fs, G& rng) {
  if (fs.q == 0) return;
  const Eigen::MatrixXd hth = fs.scores.transpose() * fs.scores;
  const Eigen::MatrixXd htv = fs.scores.transpose() * v;
  for (int j = 0; j < fs.dim(); ++j) {
    Eigen::MatrixXd prec = hth / fs.psi(j);
    for (int h = 0; h < fs.q; ++h) prec(h, h) += fs.rho(j, h) * fs.tau(h);
    Eigen::LLT<Eigen::MatrixXd> llt(prec);
    if (llt.info() != Eigen::Success) throw NumericError("loadings precision is not positive definite");
    fs.loadings.row(j) = detail::draw_from_precision(llt, htv.col(j) / fs.psi(j), rng).transpose();
  }
}

// Scores with one shared factorization: precision I + Gamma^T Psi^{-1} Gamma.
template <class G>
void update_scores(const Eigen::MatrixXd& v, FactorState& fs, G& rng) {
  if (fs.q == 0) return;
  const Eigen::MatrixXd gt_psi = fs.loadings.transpose() * fs.psi.cwiseInverse().asDiagonal();
  Eigen::MatrixXd prec = gt_psi * fs.loadings;
  prec.diagonal().array() += 1.0;
  Eigen::LLT<Eigen::MatrixXd> llt(prec);
  if (llt.info() != Eigen::Success) throw NumericError("scores precision is not positive definite");
  const Eigen::MatrixXd b = gt_psi * v.transpose();  // q x n
  for (Eigen::Index i = 0; i < v.rows(); ++i)
    fs.scores.row(i) = detail::draw_from_precision(llt, b.col(i), rng).transpose();
}

// psi_j^{-1}, local rho_jk and global varrho_h full conditionals, in that order.
template <class G>
void update_idiosyncratic_and_mgp(const Eigen::MatrixXd& v, FactorState& fs, G& rng) {
  const auto n = static_cast<double>(v.rows());
  const auto& hp = fs.hyper;
  const Eigen::MatrixXd resid = fs.q > 0 ? Eigen::MatrixXd(v - fs.scores * fs.loadings.transpose()) : v;
  for (int j = 0; j < fs.dim(); ++j) {
    const double rss = resid.col(j).squaredNorm();
    fs.psi(j) = 1.0 / gamma_rate(rng, 0.5 * n + hp.a_psi, 0.5 * rss + hp.b_psi);
  }
  if (fs.q == 0) return;
  for (int j = 0; j < fs.dim(); ++j)
    for (int h = 0; h < fs.q; ++h) {
      const double g2 = fs.loadings(j, h) * fs.loadings(j, h);
      fs.rho(j, h) = gamma_rate(rng, 0.5 * (hp.nu + 1.0), 0.5 * (hp.nu + fs.tau(h) * g2));
    }
  const double p = fs.dim();
  Eigen::VectorXd col(fs.q);
  for (int l = 0; l < fs.q; ++l) col(l) = (fs.rho.col(l).array() * fs.loadings.col(l).array().square()).sum();
  for (int h = 0; h < fs.q; ++h) {
    double rate = 1.0;
    for (int l = h; l < fs.q; ++l) rate += 0.5 * fs.tau(l) / fs.varrho(h) * col(l);
    const double shape = (h == 0 ? hp.a1 : hp.a2) + 0.5 * p * (fs.q - h);
    fs.varrho(h) = gamma_rate(rng, shape, rate);
    fs.refresh_tau();
  }
}

}  // namespace zanim
