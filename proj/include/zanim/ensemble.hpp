#pragma once

#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "zanim/tree.hpp"

namespace zanim {

struct MoveCounters {
  std::array<long, 3> proposed{};
  std::array<long, 3> accepted{};

  void merge(const MoveCounters& o) {
    for (int k = 0; k < 3; ++k) {
      proposed[k] += o.proposed[k];
      accepted[k] += o.accepted[k];
    }
  }
};

// A sum-of-trees ensemble with a cached leaf assignment per tree.
//
// sweep() runs Bayesian backfitting: for each tree, one Metropolis-Hastings
// structure move using leaf-integrated likelihoods, then a Gibbs draw of its leaves.
// The leaf model supplies per-row sufficient statistics for the tree being
// updated (computed from the fit without that tree), the integrated log
// likelihood and leaf draw given per-leaf sums, and the fit update afterwards:
//
//   void prepare(const DecisionTree&, std::span<const int> assign, std::vector<double>& su, std::vector<double>& sv);
//   double log_marginal(double su_sum, double sv_sum) const;
//   double draw_leaf(double su_sum, double sv_sum, Rng&) const;
//   void update_fit(const DecisionTree& old_t, std::span<const int> old_a,
//                   const DecisionTree& new_t, std::span<const int> new_a);
class TreeEnsemble {
 public:
  TreeEnsemble() = default;
  TreeEnsemble(int m, int n, double leaf_value)
      : trees_(m, DecisionTree(leaf_value)), assign_(m, std::vector<int>(n, DecisionTree::root())) {}

  int size() const { return static_cast<int>(trees_.size()); }
  int rows() const { return assign_.empty() ? 0 : static_cast<int>(assign_[0].size()); }
  const DecisionTree& tree(int h) const { return trees_[h]; }
  std::span<const int> assignment(int h) const { return assign_[h]; }

  // Sum of leaf values for each training row, recomputed from the trees.
  std::vector<double> fitted() const {
    std::vector<double> f(rows(), 0.0);
    for (int h = 0; h < size(); ++h) {
      const auto& t = trees_[h];
      const auto& a = assign_[h];
      for (std::size_t i = 0; i < f.size(); ++i) f[i] += t.value(a[i]);
    }
    return f;
  }

  template <class Row>
  double evaluate(const Row& x) const {
    double s = 0.0;
    for (const auto& t : trees_) s += t.value(t.find_leaf_from(DecisionTree::root(), x));
    return s;
  }

  void add_split_counts(std::span<int> counts) const {
    for (const auto& t : trees_) zanim::add_split_counts(t, counts);
  }

  template <class F>
  void for_each_leaf_value(F&& f) const {
    for (const auto& t : trees_)
      for (int id = 0; id < t.capacity(); ++id)
        if (t.alive(id) && t.is_leaf(id)) f(t.value(id));
  }

  CompactForest snapshot() const {
    CompactForest cf;
    for (const auto& t : trees_) cf.append(t);
    return cf;
  }

  // Direct replacement, used by tests and deserialization.
  void set_tree(int h, DecisionTree t, const CovariateMatrix& x) {
    assign_[h] = partition_assign(t, x);
    trees_[h] = std::move(t);
  }

  template <class Model, class G>
  void sweep(Model& model, const CovariateMatrix& x, const SplitProbabilities& probs, const TreePrior& prior,
             const MoveWeights& weights, G& rng) {
    for (int h = 0; h < size(); ++h) update_tree(h, model, x, probs, prior, weights, rng);
  }

  MoveCounters counters;

 private:
  std::vector<DecisionTree> trees_;
  std::vector<std::vector<int>> assign_;
  TreeProposal prop_;
  std::vector<double> su_, sv_, cur_u_, cur_v_, new_u_, new_v_;
  std::vector<int> leaves_;

  template <class Model>
  double leaf_sums(const DecisionTree& t, std::span<const int> a, std::vector<double>& su,
                   std::vector<double>& sv, const Model& model) {
    su.assign(t.capacity(), 0.0);
    sv.assign(t.capacity(), 0.0);
    for (std::size_t i = 0; i < a.size(); ++i) {
      su[a[i]] += su_[i];
      sv[a[i]] += sv_[i];
    }
    t.leaves(leaves_);
    double ll = 0.0;
    for (int id : leaves_) ll += model.log_marginal(su[id], sv[id]);
    return ll;
  }

  template <class Model, class G>
  void update_tree(int h, Model& model, const CovariateMatrix& x, const SplitProbabilities& probs,
                   const TreePrior& prior, const MoveWeights& weights, G& rng) {
    DecisionTree& t = trees_[h];
    std::vector<int>& a = assign_[h];
    model.prepare(t, a, su_, sv_);
    const double ll_cur = leaf_sums(t, a, cur_u_, cur_v_, model);

    propose_move(t, a, x, probs, weights, rng, prop_);
    const int kind = static_cast<int>(prop_.kind);
    ++counters.proposed[kind];
    bool accept = false;
    if (prop_.feasible) {
      const double ll_new = leaf_sums(prop_.tree, prop_.assignment, new_u_, new_v_, model);
      const double log_alpha =
          ll_new - ll_cur + tree_log_prior(prop_.tree, prior) - tree_log_prior(t, prior) + prop_.log_ratio;
      accept = std::log(uniform01(rng)) < log_alpha;
    }
    if (accept) {
      ++counters.accepted[kind];
      std::swap(t, prop_.tree);
      std::swap(a, prop_.assignment);
      std::swap(cur_u_, new_u_);
      std::swap(cur_v_, new_v_);
    } else {
      prop_.tree = t;
      prop_.assignment = a;
    }
    // prop_ now holds the tree as it was before this update.
    t.leaves(leaves_);
    for (int id : leaves_) t.set_value(id, model.draw_leaf(cur_u_[id], cur_v_[id], rng));
    model.update_fit(prop_.tree, prop_.assignment, t, a);
  }
};

}  // namespace zanim
