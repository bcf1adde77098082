#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "zanim/distributions.hpp"
#include "zanim/errors.hpp"
#include "zanim/numerics.hpp"
#include "zanim/rng.hpp"
#include "zanim/sampler.hpp"

namespace zanim {

struct WaicResult {
  double waic = 0.0;
  double lppd = 0.0;
  double p_waic = 0.0;
  long mc_evaluations = 0;      // pmf values estimated by Monte Carlo
  double max_mc_std_error = 0;  // largest standard error among those, on the pmf scale
};

namespace detail {

inline std::vector<double> row_vec(const Eigen::MatrixXd& m, Eigen::Index i) {
  std::vector<double> r(static_cast<std::size_t>(m.cols()));
  for (Eigen::Index j = 0; j < m.cols(); ++j) r[j] = m(i, j);
  return r;
}

// Theta entering the likelihood for row i of a draw: conditional on u for ZANIM-LN.
inline std::vector<double> likelihood_theta(const Draw& dr, Eigen::Index i) {
  auto th = row_vec(dr.theta, i);
  if (dr.u.size() == 0) return th;
  double s = 0.0;
  for (std::size_t j = 0; j < th.size(); ++j) s += (th[j] *= std::exp(dr.u(i, static_cast<Eigen::Index>(j))));
  for (auto& t : th) t /= s;
  return th;
}

}  // namespace detail

// log Pr[Y_i = y_i | draw] for every (draw, row); Monte Carlo past the enumeration budget.
template <class G>
Eigen::MatrixXd pointwise_log_lik(const PosteriorDraws& draws, const CountData& data, G& rng, int mc_draws,
                                  WaicResult* info = nullptr) {
  require(!draws.draws.empty(), "no posterior draws");
  require(draws.n == data.n() && draws.d == data.d(), "draws do not match the data");
  const auto T = static_cast<Eigen::Index>(draws.draws.size());
  Eigen::MatrixXd lp(T, data.n());
  std::vector<int> y(data.d());
  for (Eigen::Index t = 0; t < T; ++t) {
    const Draw& dr = draws.draws[t];
    if (dr.u.size() == 0 && draws.variant == Variant::ZanimLnBart)
      throw ValidationError("zanim-ln-bart draws need stored random effects for WAIC");
    for (int i = 0; i < data.n(); ++i) {
      for (int j = 0; j < data.d(); ++j) y[j] = data.counts(i, j);
      const auto th = detail::likelihood_theta(dr, i);
      const auto ze = detail::row_vec(dr.zeta, i);
      if (data.totals[i] == 0) {
        lp(t, i) = 0.0;
        continue;
      }
      try {
        lp(t, i) = zanim_log_pmf(y, th, ze, data.totals[i]);
      } catch (const EnumerationBudgetExceeded&) {
        ZanimParams prm{th, ze, data.totals[i]};
        const auto v = zanim_pmf_mc(y, prm, mc_draws, rng);
        lp(t, i) = v.log_value;
        if (info) {
          ++info->mc_evaluations;
          info->max_mc_std_error = std::max(info->max_mc_std_error, v.std_error);
        }
      }
    }
  }
  return lp;
}

// WAIC = -2 (lppd - p_waic), p_waic = sum_i Var_t log Pr[y_i | draw t].
inline WaicResult waic_from_log_lik(const Eigen::MatrixXd& lp) {
  WaicResult r;
  const auto T = lp.rows();
  std::vector<double> col(static_cast<std::size_t>(T));
  for (Eigen::Index i = 0; i < lp.cols(); ++i) {
    RunningMoments m;
    for (Eigen::Index t = 0; t < T; ++t) {
      col[t] = lp(t, i);
      m.push(col[t]);
    }
    r.lppd += log_sum_exp(col) - std::log(static_cast<double>(T));
    r.p_waic += m.variance();
  }
  r.waic = -2.0 * (r.lppd - r.p_waic);
  return r;
}

template <class G>
WaicResult waic(const PosteriorDraws& draws, const CountData& data, G& rng, int mc_draws = 20000) {
  WaicResult info;
  const auto lp = pointwise_log_lik(draws, data, rng, mc_draws, &info);
  auto r = waic_from_log_lik(lp);
  r.mc_evaluations = info.mc_evaluations;
  r.max_mc_std_error = info.max_mc_std_error;
  return r;
}

// Ranked probability score for one category. predictive(t, i) is the relative
// abundance of row i in predictive draw t; the grid is the sorted distinct observed values.
inline double rps(const Eigen::MatrixXd& predictive, std::span<const double> observed) {
  require(predictive.cols() == static_cast<Eigen::Index>(observed.size()), "predictive draws do not match observations");
  require(predictive.rows() > 0, "no predictive draws");
  std::vector<double> grid(observed.begin(), observed.end());
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  const auto T = predictive.rows();
  std::vector<double> col(static_cast<std::size_t>(T));
  double total = 0.0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    for (Eigen::Index t = 0; t < T; ++t) col[t] = predictive(t, static_cast<Eigen::Index>(i));
    std::sort(col.begin(), col.end());
    double s = 0.0;
    for (double g : grid) {
      const double f = static_cast<double>(std::upper_bound(col.begin(), col.end(), g) - col.begin()) / T;
      const double ind = observed[i] <= g ? 1.0 : 0.0;
      s += (f - ind) * (f - ind);
    }
    total += s;
  }
  return total / static_cast<double>(observed.size());
}

// In-sample predictive counts: Y_i ~ Multinomial(N_i, vartheta_i) for each draw.
template <class G>
std::vector<Eigen::MatrixXi> posterior_predictive(const PosteriorDraws& draws, const CountData& data, G& rng) {
  std::vector<Eigen::MatrixXi> out;
  for (const auto& dr : draws.draws) {
    require(dr.vartheta.size() > 0, "draws were stored without fitted probabilities");
    Eigen::MatrixXi y = Eigen::MatrixXi::Zero(data.n(), data.d());
    for (int i = 0; i < data.n(); ++i) {
      const auto pr = detail::row_vec(dr.vartheta, i);
      double s = 0.0;
      for (double v : pr) s += v;
      if (s <= 0.0) continue;
      const auto c = multinomial(rng, data.totals[i], pr);
      for (int j = 0; j < data.d(); ++j) y(i, j) = c[j];
    }
    out.push_back(std::move(y));
  }
  return out;
}

// Out-of-sample predictive counts, marginal over z (and u for ZANIM-LN).
template <class G>
std::vector<Eigen::MatrixXi> posterior_predictive_marginal(const PosteriorDraws& draws, std::span<const int> totals,
                                                           G& rng) {
  std::vector<Eigen::MatrixXi> out;
  for (const auto& dr : draws.draws) {
    const auto n = dr.theta.rows();
    require(static_cast<Eigen::Index>(totals.size()) == n, "totals do not match the draws");
    Eigen::MatrixXi y(n, dr.theta.cols());
    Eigen::MatrixXd factor;
    if (dr.sigma_u.size() > 0) factor = covariance_factor(dr.sigma_u);
    for (Eigen::Index i = 0; i < n; ++i) {
      ZanimParams prm{detail::row_vec(dr.theta, i), detail::row_vec(dr.zeta, i), totals[i]};
      if (factor.size() > 0) {
        Eigen::VectorXd e(factor.cols());
        for (Eigen::Index k = 0; k < e.size(); ++k) e(k) = std_normal(rng);
        const Eigen::VectorXd u = factor * e;
        double s = 0.0;
        for (std::size_t j = 0; j < prm.theta.size(); ++j) s += (prm.theta[j] *= std::exp(u(static_cast<Eigen::Index>(j))));
        for (auto& t : prm.theta) t /= s;
      }
      const auto c = totals[i] > 0 ? sample_zanim(prm, rng) : std::vector<int>(prm.theta.size(), 0);
      for (Eigen::Index j = 0; j < y.cols(); ++j) y(i, j) = c[j];
    }
    out.push_back(std::move(y));
  }
  return out;
}

struct KlPoint {
  int iteration = 0;
  double theta = 0.0;
  double zeta = 0.0;
  long clamped = 0;  // estimated probabilities moved to 1e-12 or 1 - 1e-12
};

inline constexpr double kKlFloor = 1e-12;

inline double kl_theta(const Eigen::MatrixXd& truth, const Eigen::MatrixXd& est, long* clamped = nullptr) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < truth.rows(); ++i)
    for (Eigen::Index j = 0; j < truth.cols(); ++j) {
      if (truth(i, j) <= 0.0) continue;
      if (clamped && est(i, j) < kKlFloor) ++*clamped;
      const double a = truth(i, j), b = std::max(est(i, j), kKlFloor);
      s += a * std::log(a / b);
    }
  return s / static_cast<double>(truth.rows());
}

inline double kl_zeta(const Eigen::MatrixXd& truth, const Eigen::MatrixXd& est, long* clamped = nullptr) {
  double s = 0.0;
  for (Eigen::Index k = 0; k < truth.size(); ++k) {
    const double a = std::clamp(truth.data()[k], kKlFloor, 1.0 - kKlFloor);
    const double e = est.data()[k];
    if (clamped && (e < kKlFloor || e > 1.0 - kKlFloor)) ++*clamped;
    const double b = std::clamp(e, kKlFloor, 1.0 - kKlFloor);
    s += a * std::log(a / b) + (1.0 - a) * std::log((1.0 - a) / (1.0 - b));
  }
  return s / static_cast<double>(truth.size());
}

inline std::vector<KlPoint> kl_traces(const PosteriorDraws& draws, const Eigen::MatrixXd& theta_true,
                                      const Eigen::MatrixXd& zeta_true) {
  require(theta_true.rows() == draws.n && theta_true.cols() == draws.d, "theta truth has the wrong shape");
  require(zeta_true.rows() == draws.n && zeta_true.cols() == draws.d, "zeta truth has the wrong shape");
  std::vector<KlPoint> out;
  for (const auto& dr : draws.draws) {
    KlPoint pt{dr.iteration, 0.0, 0.0, 0};
    pt.theta = kl_theta(theta_true, dr.theta, &pt.clamped);
    pt.zeta = kl_zeta(zeta_true, dr.zeta, &pt.clamped);
    out.push_back(pt);
  }
  return out;
}

// sqrt(sum_ij (y_ij/N_i - vartheta_ij)^2) per draw; rows with N_i = 0 are skipped.
inline std::vector<double> frobenius_trace(const PosteriorDraws& draws, const CountData& data) {
  std::vector<double> out;
  for (const auto& dr : draws.draws) {
    require(dr.vartheta.size() > 0, "draws were stored without fitted probabilities");
    double s = 0.0;
    for (int i = 0; i < data.n(); ++i) {
      if (data.totals[i] == 0) continue;
      for (int j = 0; j < data.d(); ++j) {
        const double r = static_cast<double>(data.counts(i, j)) / data.totals[i] - dr.vartheta(i, j);
        s += r * r;
      }
    }
    out.push_back(std::sqrt(s));
  }
  return out;
}

// Effective sample size with Geyer's initial monotone positive sequence.
inline double effective_sample_size(std::span<const double> x) {
  const auto n = static_cast<long>(x.size());
  if (n < 4) return static_cast<double>(n);
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  auto acov = [&](long lag) {
    double s = 0.0;
    for (long t = 0; t + lag < n; ++t) s += (x[t] - mean) * (x[t + lag] - mean);
    return s / n;
  };
  const double g0 = acov(0);
  if (g0 <= 0.0) return static_cast<double>(n);
  double sum = 0.0, prev = std::numeric_limits<double>::infinity();
  for (long k = 0; 2 * k + 1 < n; ++k) {
    double pair = (acov(2 * k) + acov(2 * k + 1)) / g0;
    if (pair <= 0.0) break;
    pair = std::min(pair, prev);
    prev = pair;
    sum += pair;
  }
  const double tau = std::max(2.0 * sum - 1.0, 1.0 / n);
  return n / tau;
}

// Fraction of draws in which each (category, level, covariate) is used by at least one split.
inline std::vector<double> mppi(const PosteriorDraws& draws) {
  require(!draws.draws.empty(), "no posterior draws");
  std::vector<double> out(static_cast<std::size_t>(draws.d) * 2 * draws.p, 0.0);
  for (const auto& dr : draws.draws)
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += dr.usage[k] > 0 ? 1.0 : 0.0;
  for (auto& v : out) v /= static_cast<double>(draws.draws.size());
  return out;
}

// Sample quantile with linear interpolation between order statistics.
inline double quantile(std::vector<double> v, double q) {
  require(!v.empty(), "quantile of an empty sample");
  std::sort(v.begin(), v.end());
  const double h = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

struct PdpRow {
  double grid_value = 0.0;
  int category = 0;
  int level = 0;  // 0 = theta, 1 = zeta
  double q025 = 0.0;
  double median = 0.0;
  double q975 = 0.0;
};

// Partial dependence on covariate k: theta and zeta averaged over the reference
// rows with x_k set to each grid value, summarized across draws.
inline std::vector<PdpRow> partial_dependence(const PosteriorDraws& draws, const Eigen::MatrixXd& x_ref, int k,
                                              std::span<const double> grid) {
  require(k >= 0 && k < draws.p, "covariate index out of range");
  require(!draws.draws.empty(), "no posterior draws");
  const int d = draws.d;
  const auto T = draws.draws.size();
  std::vector<PdpRow> out;
  for (double g : grid) {
    Eigen::MatrixXd x = x_ref;
    x.col(k).setConstant(g);
    const auto preds = predict(draws, x);
    for (int level = 0; level < 2; ++level) {
      if (level == 1 && draws.variant == Variant::MultinomialBart) continue;
      for (int j = 0; j < d; ++j) {
        std::vector<double> avg(T);
        for (std::size_t t = 0; t < T; ++t) avg[t] = (level == 0 ? preds[t].theta : preds[t].zeta).col(j).mean();
        out.push_back({g, j, level, quantile(avg, 0.025), quantile(avg, 0.5), quantile(avg, 0.975)});
      }
    }
  }
  return out;
}

}  // namespace zanim
