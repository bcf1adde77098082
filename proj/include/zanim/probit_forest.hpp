#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "zanim/ensemble.hpp"
#include "zanim/errors.hpp"
#include "zanim/numerics.hpp"
#include "zanim/rng.hpp"

namespace zanim {

// N(0, sigma_mu^2) leaf prior with sigma_mu = 0.5 / (k sqrt(m)).
struct NormalLeafPrior {
  int m = 200;
  double k = 2.0;
  double sigma = 0.5 / (2.0 * std::sqrt(200.0));

  static NormalLeafPrior calibrated(int m, double k = 2.0) {
    require(m > 0, "number of trees must be positive");
    require(k > 0.0, "k must be positive");
    return {m, k, 0.5 / (k * std::sqrt(static_cast<double>(m)))};
  }

  // Integrated likelihood of a leaf with `count` residuals summing to `sum`,
  // relative to the likelihood at mu = 0.
  double log_marginal(double count, double sum) const {
    const double s2 = sigma * sigma;
    const double den = count * s2 + 1.0;
    return -0.5 * std::log(den) + s2 * sum * sum / (2.0 * den);
  }

  template <class G>
  double draw(double count, double sum, G& rng) const {
    const double prec = count + 1.0 / (sigma * sigma);
    return sum / prec + std_normal(rng) / std::sqrt(prec);
  }
};

// Sum-of-trees probit ensemble for one category's structural-zero probability.
class ProbitForest {
 public:
  ProbitForest() = default;
  ProbitForest(int m, int n) : trees_(m, n, 0.0), fit_(n, 0.0) {}

  const TreeEnsemble& ensemble() const { return trees_; }
  TreeEnsemble& ensemble() { return trees_; }
  std::span<const double> fit() const { return fit_; }
  int size() const { return trees_.size(); }

  void resync() { fit_ = trees_.fitted(); }

  template <class Row>
  double evaluate(const Row& x) const {
    return trees_.evaluate(x);
  }
  template <class Row>
  double zeta(const Row& x) const {
    return norm_cdf(evaluate(x));
  }

  template <class G>
  void backfit(std::span<const double> w, const CovariateMatrix& x, const SplitProbabilities& probs,
               const NormalLeafPrior& prior, const TreePrior& tree_prior, const MoveWeights& weights, G& rng) {
    resync();
    Model model{this, w, prior};
    trees_.sweep(model, x, probs, tree_prior, weights, rng);
  }

 private:
  struct Model {
    ProbitForest* self;
    std::span<const double> w;
    const NormalLeafPrior& prior;

    // Partial residuals r = w - (fit - tree h).
    void prepare(const DecisionTree& t, std::span<const int> a, std::vector<double>& su, std::vector<double>& sv) {
      const auto& f = self->fit_;
      su.assign(a.size(), 1.0);
      sv.resize(a.size());
      for (std::size_t i = 0; i < a.size(); ++i) sv[i] = w[i] - f[i] + t.value(a[i]);
    }
    double log_marginal(double count, double sum) const { return prior.log_marginal(count, sum); }
    template <class G>
    double draw_leaf(double count, double sum, G& rng) const {
      return prior.draw(count, sum, rng);
    }
    void update_fit(const DecisionTree& old_t, std::span<const int> old_a, const DecisionTree& new_t,
                    std::span<const int> new_a) {
      auto& f = self->fit_;
      for (std::size_t i = 0; i < f.size(); ++i) f[i] += new_t.value(new_a[i]) - old_t.value(old_a[i]);
    }
  };

  TreeEnsemble trees_;
  std::vector<double> fit_;
};

}  // namespace zanim
