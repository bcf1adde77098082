#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "zanim/ensemble.hpp"
#include "zanim/errors.hpp"
#include "zanim/numerics.hpp"
#include "zanim/rng.hpp"

namespace zanim {

inline constexpr double kLogTiny = -690.7755278982137;  // log(1e-300)

// Solves trigamma(x) = y by Newton's method from the asymptotic start 1/y + 1/2.
inline double inverse_trigamma(double y) {
  require(y > 0.0 && std::isfinite(y), "inverse_trigamma needs a positive argument");
  double x = 1.0 / y + 0.5;
  for (int it = 0; it < 100; ++it) {
    double next = x - (trigamma(x) - y) / tetragamma(x);
    if (!(next > 0.0)) next = 0.5 * x;
    const double step = std::abs(next - x);
    x = next;
    if (step <= 1e-12 * std::max(1.0, x)) return x;
  }
  throw NumericError("inverse_trigamma did not converge");
}

// Gamma(c0, d0) leaf prior with Var[log lambda] = a^2/m and E[log lambda] = 0.
struct GammaLeafPrior {
  int m = 200;
  double a_lambda = 3.5 / std::numbers::sqrt2;
  double c0 = 1.0;
  double d0 = 1.0;
  double log_d0 = 0.0;
  double lgamma_c0 = 0.0;

  static GammaLeafPrior calibrated(int m, double a_lambda) {
    require(m > 0, "number of trees must be positive");
    require(a_lambda > 0.0 && std::isfinite(a_lambda), "a_lambda must be positive");
    GammaLeafPrior g;
    g.m = m;
    g.a_lambda = a_lambda;
    g.c0 = inverse_trigamma(a_lambda * a_lambda / m);
    g.log_d0 = digamma(g.c0);
    g.d0 = std::exp(g.log_d0);
    g.lgamma_c0 = std::lgamma(g.c0);
    return g;
  }

  // Integrated likelihood of a leaf with count sum r and exposure s.
  double log_marginal(double r, double s) const {
    return c0 * log_d0 - lgamma_c0 + std::lgamma(r + c0) - (r + c0) * std::log(s + d0);
  }

  // Log density of a set of leaves given only sum log lambda, sum lambda and count.
  double log_density(double sum_log, double sum_lambda, long count) const {
    return count * (c0 * log_d0 - lgamma_c0) + (c0 - 1.0) * sum_log - d0 * sum_lambda;
  }
};

// log lambda ~ log Gamma(r + c0, s + d0), floored at log(1e-300).
template <class G>
double draw_log_lambda(double r, double s, const GammaLeafPrior& prior, G& rng, long* clamps = nullptr) {
  double v = log_gamma_variate(rng, r + prior.c0) - std::log(s + prior.d0);
  if (!(v >= kLogTiny)) {
    v = kLogTiny;
    if (clamps) ++*clamps;
  }
  return v;
}

// Leaf model for the log-linear (compositional) ensemble of one category.
// Leaf values are log lambda; log_fit caches the sum over trees for each row.
//
// base[i] = phi_i z_ij exp(u_ij); the row weight entering the leaf exposure is
// base[i] times the product of the other trees' lambdas.
class LogLinearForest {
 public:
  LogLinearForest() = default;
  LogLinearForest(int m, int n) : trees_(m, n, 0.0), log_fit_(n, 0.0), weight_(n, 0.0) {}

  const TreeEnsemble& ensemble() const { return trees_; }
  TreeEnsemble& ensemble() { return trees_; }
  std::span<const double> log_fit() const { return log_fit_; }
  int size() const { return trees_.size(); }

  void resync() { log_fit_ = trees_.fitted(); }

  template <class Row>
  double log_evaluate(const Row& x) const {
    return trees_.evaluate(x);
  }

  // use_data = false drops the likelihood (rows contribute nothing).
  template <class G>
  void backfit(std::span<const int> y, std::span<const double> base, const CovariateMatrix& x,
               const SplitProbabilities& probs, const GammaLeafPrior& prior, const TreePrior& tree_prior,
               const MoveWeights& weights, G& rng, bool use_data = true) {
    resync();
    Model model{this, y, prior, use_data, {}, nullptr};
    if (use_data) {
      for (std::size_t i = 0; i < weight_.size(); ++i)
        weight_[i] = base[i] > 0.0 ? std::exp(std::log(base[i]) + log_fit_[i]) : 0.0;
    }
    trees_.sweep(model, x, probs, tree_prior, weights, rng);
  }

  // Leaf draws that hit the 1e-300 floor.
  long clamp_events = 0;

 private:
  struct Model {
    LogLinearForest* self;
    std::span<const int> y;
    const GammaLeafPrior& prior;
    bool use_data;
    std::vector<double> factor;
    const std::vector<double>* partial = nullptr;

    void prepare(const DecisionTree& t, std::span<const int> a, std::vector<double>& su, std::vector<double>& sv) {
      const std::size_t n = a.size();
      su.assign(n, 0.0);
      sv.assign(n, 0.0);
      if (!use_data) return;
      factor.assign(t.capacity(), 0.0);
      for (int id = 0; id < t.capacity(); ++id)
        if (t.alive(id) && t.is_leaf(id)) factor[id] = std::exp(-t.value(id));
      const auto& w = self->weight_;
      for (std::size_t i = 0; i < n; ++i) {
        su[i] = y[i];
        sv[i] = w[i] * factor[a[i]];
      }
      partial = &sv;
    }
    double log_marginal(double r, double s) const { return prior.log_marginal(r, s); }
    template <class G>
    double draw_leaf(double r, double s, G& rng) const {
      return draw_log_lambda(r, s, prior, rng, &self->clamp_events);
    }
    void update_fit(const DecisionTree& old_t, std::span<const int> old_a, const DecisionTree& new_t,
                    std::span<const int> new_a) {
      auto& lf = self->log_fit_;
      auto& w = self->weight_;
      factor.assign(new_t.capacity(), 0.0);
      for (int id = 0; id < new_t.capacity(); ++id)
        if (new_t.alive(id) && new_t.is_leaf(id)) factor[id] = std::exp(new_t.value(id));
      for (std::size_t i = 0; i < lf.size(); ++i) {
        lf[i] += new_t.value(new_a[i]) - old_t.value(old_a[i]);
        if (use_data) w[i] = (*partial)[i] * factor[new_a[i]];
      }
    }
  };

  TreeEnsemble trees_;
  std::vector<double> log_fit_;
  std::vector<double> weight_;
};

// Slice update of a_lambda on the log scale (stepping-out width 1) under a
// half-Cauchy(0, 1) prior, given summaries of every log-linear leaf.
template <class G>
double update_a_lambda(double a_lambda, int m, double sum_log, double sum_lambda, long count, G& rng) {
  auto log_post = [&](double eta) {
    const double a = std::exp(eta);
    const auto g = GammaLeafPrior::calibrated(m, a);
    return g.log_density(sum_log, sum_lambda, count) - std::log1p(a * a) + eta;
  };
  const double lo = std::log(1e-4), hi = std::log(1e4);
  const double eta = slice_sample(std::clamp(std::log(a_lambda), lo, hi), log_post, 1.0, rng, lo, hi);
  return std::exp(eta);
}

}  // namespace zanim
