#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "zanim/errors.hpp"
#include "zanim/numerics.hpp"
#include "zanim/rng.hpp"

namespace zanim {

inline constexpr std::uint64_t kDefaultEnumerationBudget = std::uint64_t{1} << 20;

struct ZanimParams {
  std::vector<double> theta;
  std::vector<double> zeta;
  int total = 0;

  void validate() const {
    require(!theta.empty() && theta.size() == zeta.size(), "theta and zeta must have equal, nonzero length");
    require(total > 0, "total count must be positive");
    double s = 0.0;
    for (double t : theta) {
      require(t >= 0.0 && std::isfinite(t), "theta entries must be nonnegative");
      s += t;
    }
    require(std::abs(s - 1.0) < 1e-9, "theta must sum to one");
    for (double z : zeta) require(z >= 0.0 && z <= 1.0, "zeta entries must lie in [0, 1]");
  }
};

struct ZanimLnParams {
  std::vector<double> alpha;
  Eigen::MatrixXd sigma_u;
  std::vector<double> zeta;
  int total = 0;

  void validate() const {
    const auto d = alpha.size();
    require(d > 0 && zeta.size() == d, "alpha and zeta must have equal, nonzero length");
    require(total > 0, "total count must be positive");
    for (double a : alpha) require(a > 0.0 && std::isfinite(a), "alpha entries must be positive");
    for (double z : zeta) require(z >= 0.0 && z <= 1.0, "zeta entries must lie in [0, 1]");
    require(sigma_u.rows() == static_cast<Eigen::Index>(d) && sigma_u.cols() == sigma_u.rows(),
            "sigma_u must be d x d");
    require((sigma_u - sigma_u.transpose()).cwiseAbs().maxCoeff() < 1e-10, "sigma_u must be symmetric");
  }
};

struct PmfValue {
  double value = 0.0;
  double log_value = kNegInf;
  double std_error = 0.0;
  bool exact = true;
};

struct MarginalMoments {
  std::vector<double> mean;
  std::vector<double> variance;
  std::vector<double> dispersion;
  std::vector<double> prob_zero;
  // Undefined when the dispersion index is one or the mean is zero.
  std::vector<std::optional<double>> zero_inflation;
};

class EnumerationBudgetExceeded : public std::runtime_error {
 public:
  explicit EnumerationBudgetExceeded(std::uint64_t subsets)
      : std::runtime_error("zero-pattern enumeration needs " + std::to_string(subsets) +
                           " subsets; use the Monte Carlo estimator"),
        subsets_(subsets) {}
  std::uint64_t subsets() const { return subsets_; }

 private:
  std::uint64_t subsets_;
};

// Factor A with A A^T = sigma, via the eigendecomposition so that singular
// (positive semidefinite) covariances are accepted.
inline Eigen::MatrixXd covariance_factor(const Eigen::MatrixXd& sigma) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sigma);
  if (es.info() != Eigen::Success) throw ValidationError("covariance factorization failed");
  Eigen::VectorXd ev = es.eigenvalues();
  const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
  for (Eigen::Index k = 0; k < ev.size(); ++k) {
    if (ev(k) < -1e-10 * scale) throw ValidationError("covariance is not positive semidefinite");
    ev(k) = std::sqrt(std::max(ev(k), 0.0));
  }
  return es.eigenvectors() * ev.asDiagonal();
}

namespace detail {

inline std::vector<double> ln_theta(std::span<const double> alpha, const Eigen::VectorXd& u) {
  std::vector<double> th(alpha.size());
  double m = kNegInf;
  for (std::size_t j = 0; j < th.size(); ++j) {
    th[j] = std::log(alpha[j]) + u(static_cast<Eigen::Index>(j));
    m = std::max(m, th[j]);
  }
  double s = 0.0;
  for (auto& t : th) s += (t = std::exp(t - m));
  for (auto& t : th) t /= s;
  return th;
}

// Pieces shared by the exact and Monte Carlo pmf: the observed-support constant and
// the categories whose inclusion is random.
struct PmfSetup {
  bool all_zero = false;
  double log_const = 0.0;  // multinomial coefficient, observed theta powers and presence
  double base_mass = 0.0;  // theta mass of categories certainly present
  std::vector<int> free;   // zero-count categories with 0 < zeta < 1
  bool impossible = false;
};

inline PmfSetup pmf_setup(std::span<const int> y, std::span<const double> theta,
                          std::span<const double> zeta, int total) {
  require(y.size() == theta.size() && theta.size() == zeta.size(), "count vector has the wrong length");
  long sum = 0;
  for (int v : y) {
    require(v >= 0, "counts must be nonnegative");
    sum += v;
  }
  require(sum == 0 || sum == total, "counts must sum to the total or be all zero");
  PmfSetup s;
  if (sum == 0) {
    s.all_zero = true;
    for (double z : zeta) s.log_const += std::log(z);
    return s;
  }
  s.log_const = std::lgamma(total + 1.0);
  for (std::size_t j = 0; j < y.size(); ++j) {
    if (y[j] > 0) {
      if (theta[j] <= 0.0 || zeta[j] >= 1.0) s.impossible = true;
      s.log_const += y[j] * std::log(theta[j]) - std::lgamma(y[j] + 1.0) + std::log1p(-zeta[j]);
      s.base_mass += theta[j];
    } else if (zeta[j] <= 0.0) {
      s.base_mass += theta[j];  // present with certainty
    } else if (zeta[j] < 1.0 && theta[j] > 0.0) {
      s.free.push_back(static_cast<int>(j));
    }
    // zeta == 1 (absent for sure) and theta == 0 (no mass) contribute a factor of one.
  }
  return s;
}

}  // namespace detail

template <class G>
std::vector<int> sample_zanim(const ZanimParams& p, G& g) {
  const auto d = p.theta.size();
  std::vector<double> w(d, 0.0);
  bool any = false;
  for (std::size_t j = 0; j < d; ++j) {
    if (bernoulli(g, 1.0 - p.zeta[j])) {
      w[j] = p.theta[j];
      any = any || w[j] > 0.0;
    }
  }
  if (!any) return std::vector<int>(d, 0);
  return multinomial(g, p.total, w);
}

template <class G>
std::vector<int> sample_zanim_ln(const ZanimLnParams& p, const Eigen::MatrixXd& factor, G& g) {
  Eigen::VectorXd e(factor.cols());
  for (Eigen::Index k = 0; k < e.size(); ++k) e(k) = std_normal(g);
  const Eigen::VectorXd u = factor * e;
  ZanimParams zp{detail::ln_theta(p.alpha, u), p.zeta, p.total};
  return sample_zanim(zp, g);
}

template <class G>
std::vector<int> sample_zanim_ln(const ZanimLnParams& p, G& g) {
  const Eigen::MatrixXd a = covariance_factor(p.sigma_u);
  return sample_zanim_ln(p, a, g);
}

// Exact log Pr[Y = y] by enumerating the zero patterns compatible with y.
inline double zanim_log_pmf(std::span<const int> y, std::span<const double> theta,
                            std::span<const double> zeta, int total,
                            std::uint64_t budget = kDefaultEnumerationBudget) {
  const auto s = detail::pmf_setup(y, theta, zeta, total);
  if (s.all_zero) return s.log_const;
  if (s.impossible) return kNegInf;
  const std::size_t f = s.free.size();
  if (f >= 63 || (std::uint64_t{1} << f) > budget)
    throw EnumerationBudgetExceeded(f >= 63 ? ~std::uint64_t{0} : std::uint64_t{1} << f);
  std::vector<double> l1(f), l0(f), th(f);
  for (std::size_t k = 0; k < f; ++k) {
    const int j = s.free[k];
    l1[k] = std::log1p(-zeta[j]);
    l0[k] = std::log(zeta[j]);
    th[k] = theta[j];
  }
  const std::uint64_t count = std::uint64_t{1} << f;
  double m = kNegInf;
  std::vector<double> terms(count);
  for (std::uint64_t mask = 0; mask < count; ++mask) {
    double lw = 0.0, mass = s.base_mass;
    for (std::size_t k = 0; k < f; ++k) {
      if (mask >> k & 1U) {
        lw += l1[k];
        mass += th[k];
      } else {
        lw += l0[k];
      }
    }
    terms[mask] = lw - total * std::log(mass);
    m = std::max(m, terms[mask]);
  }
  double acc = 0.0;
  for (double t : terms) acc += std::exp(t - m);
  return s.log_const + m + std::log(acc);
}

inline PmfValue zanim_pmf(std::span<const int> y, const ZanimParams& p,
                          std::uint64_t budget = kDefaultEnumerationBudget) {
  p.validate();
  const double lp = zanim_log_pmf(y, p.theta, p.zeta, p.total, budget);
  return {std::exp(lp), lp, 0.0, true};
}

// Monte Carlo over the zero pattern of the zero-count categories, for cases past
// the enumeration budget.
template <class G>
PmfValue zanim_pmf_mc(std::span<const int> y, const ZanimParams& p, int draws, G& g) {
  p.validate();
  require(draws > 0, "number of draws must be positive");
  const auto s = detail::pmf_setup(y, p.theta, p.zeta, p.total);
  if (s.all_zero) return {std::exp(s.log_const), s.log_const, 0.0, true};
  if (s.impossible) return {0.0, kNegInf, 0.0, true};
  // Terms are scaled by the largest possible one (all free categories absent).
  const double ref = -p.total * std::log(s.base_mass);
  RunningMoments acc;
  for (int t = 0; t < draws; ++t) {
    double mass = s.base_mass;
    for (int j : s.free)
      if (bernoulli(g, 1.0 - p.zeta[j])) mass += p.theta[j];
    acc.push(std::exp(-p.total * std::log(mass) - ref));
  }
  const double lv = s.log_const + ref + std::log(acc.mean);
  return {std::exp(lv), lv, std::exp(s.log_const + ref) * acc.std_error(), false};
}

template <class G>
PmfValue zanim_ln_pmf_mc(std::span<const int> y, const ZanimLnParams& p, int draws, G& g) {
  p.validate();
  require(draws > 0, "number of draws must be positive");
  const Eigen::MatrixXd a = covariance_factor(p.sigma_u);
  const auto d = static_cast<Eigen::Index>(p.alpha.size());
  RunningMoments acc;
  Eigen::VectorXd e(d);
  for (int t = 0; t < draws; ++t) {
    for (Eigen::Index k = 0; k < d; ++k) e(k) = std_normal(g);
    const auto th = detail::ln_theta(p.alpha, a * e);
    acc.push(std::exp(zanim_log_pmf(y, th, p.zeta, p.total)));
  }
  return {acc.mean, std::log(acc.mean), acc.std_error(), false};
}

namespace detail {

// Per-category E[Y], E[Y^2] and Pr[Y = 0] by enumeration over all zero patterns.
inline void zanim_raw_moments(std::span<const double> theta, std::span<const double> zeta, int total,
                              std::vector<double>& m1, std::vector<double>& m2, std::vector<double>& p0) {
  const std::size_t d = theta.size();
  require(d < 26, "exact moments support at most 25 categories");
  m1.assign(d, 0.0);
  m2.assign(d, 0.0);
  p0.assign(d, 0.0);
  const double n = total;
  for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << d); ++mask) {
    double w = 1.0, mass = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      if (mask >> j & 1U) {
        w *= 1.0 - zeta[j];
        mass += theta[j];
      } else {
        w *= zeta[j];
      }
    }
    if (w == 0.0) continue;
    for (std::size_t j = 0; j < d; ++j) {
      const bool present = (mask >> j & 1U) && mass > 0.0;
      const double q = present ? theta[j] / mass : 0.0;
      m1[j] += w * n * q;
      m2[j] += w * (n * q * (1.0 - q) + n * n * q * q);
      p0[j] += w * std::pow(1.0 - q, n);
    }
  }
}

inline MarginalMoments finish_moments(const std::vector<double>& m1, const std::vector<double>& m2,
                                      const std::vector<double>& p0) {
  MarginalMoments out;
  out.mean = m1;
  out.prob_zero = p0;
  for (std::size_t j = 0; j < m1.size(); ++j) {
    const double var = m2[j] - m1[j] * m1[j];
    out.variance.push_back(var);
    const double di = m1[j] > 0.0 ? var / m1[j] : std::nan("");
    out.dispersion.push_back(di);
    if (m1[j] > 0.0 && di != 1.0 && p0[j] > 0.0)
      out.zero_inflation.emplace_back(1.0 + (var - m1[j]) * std::log(p0[j]) / (m1[j] * m1[j] * std::log(di)));
    else
      out.zero_inflation.emplace_back(std::nullopt);
  }
  return out;
}

}  // namespace detail

inline MarginalMoments marginal_moments(const ZanimParams& p) {
  p.validate();
  std::vector<double> m1, m2, p0;
  detail::zanim_raw_moments(p.theta, p.zeta, p.total, m1, m2, p0);
  return detail::finish_moments(m1, m2, p0);
}

// ZANIM-LN moments: exact conditional moments given u, averaged over u draws.
template <class G>
MarginalMoments marginal_moments(const ZanimLnParams& p, int draws, G& g) {
  p.validate();
  require(draws > 0, "number of draws must be positive");
  const Eigen::MatrixXd a = covariance_factor(p.sigma_u);
  const std::size_t d = p.alpha.size();
  std::vector<double> s1(d, 0.0), s2(d, 0.0), s0(d, 0.0), m1, m2, p0;
  Eigen::VectorXd e(static_cast<Eigen::Index>(d));
  for (int t = 0; t < draws; ++t) {
    for (Eigen::Index k = 0; k < e.size(); ++k) e(k) = std_normal(g);
    const auto th = detail::ln_theta(p.alpha, a * e);
    detail::zanim_raw_moments(th, p.zeta, p.total, m1, m2, p0);
    for (std::size_t j = 0; j < d; ++j) {
      s1[j] += m1[j];
      s2[j] += m2[j];
      s0[j] += p0[j];
    }
  }
  for (std::size_t j = 0; j < d; ++j) {
    s1[j] /= draws;
    s2[j] /= draws;
    s0[j] /= draws;
  }
  return detail::finish_moments(s1, s2, s0);
}

}  // namespace zanim
