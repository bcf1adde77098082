#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <map>
#include <set>

#include "zanim/tree.hpp"

using namespace zanim;

namespace {

CovariateMatrix random_covariates(int n, int p, Rng& g, int levels = 0) {
  Eigen::MatrixXd x(n, p);
  for (Eigen::Index k = 0; k < x.size(); ++k)
    x.data()[k] = levels > 0 ? std::floor(uniform01(g) * levels) : uniform01(g);
  return CovariateMatrix(x);
}

// Grows a random tree by repeatedly splitting random leaves with valid rules.
DecisionTree random_tree(const CovariateMatrix& x, int splits, Rng& g) {
  DecisionTree t;
  const auto probs = SplitProbabilities::uniform(x.p());
  for (int s = 0; s < splits; ++s) {
    const auto a = partition_assign(t, x);
    const auto grow = growable_leaves(t, a, x);
    if (grow.empty()) break;
    const int leaf = grow[static_cast<std::size_t>(uniform01(g) * grow.size())];
    std::vector<int> rows;
    for (int i = 0; i < x.n(); ++i)
      if (a[i] == leaf) rows.push_back(i);
    const auto rule = sample_split_rule(rows, x, probs, g);
    t.split(leaf, *rule);
  }
  for (int id : t.leaves()) t.set_value(id, std_normal(g));
  return t;
}

// Recursive prior evaluation written separately from the library's slot loop.
double recursive_log_prior(const DecisionTree& t, int id, const TreePrior& pr) {
  const auto& nd = t.node(id);
  const double ps = pr.alpha * std::pow(1.0 + nd.depth, -pr.beta);
  if (t.is_leaf(id)) return std::log(1.0 - ps);
  return std::log(ps) + recursive_log_prior(t, nd.left, pr) + recursive_log_prior(t, nd.right, pr);
}

// Independent counts of growable leaves and prunable nodes.
int count_growable(const DecisionTree& t, const CovariateMatrix& x) {
  std::map<int, std::set<std::vector<double>>> distinct;
  for (int i = 0; i < x.n(); ++i) {
    std::vector<double> row(x.p());
    for (int k = 0; k < x.p(); ++k) row[k] = x(i, k);
    distinct[t.find_leaf(x, i)].insert(row);
  }
  int c = 0;
  for (auto& [leaf, rows] : distinct) c += rows.size() >= 2;
  return c;
}

int count_prunable(const DecisionTree& t) {
  int c = 0;
  std::function<void(int)> walk = [&](int id) {
    if (t.is_leaf(id)) return;
    const auto& nd = t.node(id);
    if (t.is_leaf(nd.left) && t.is_leaf(nd.right)) ++c;
    walk(nd.left);
    walk(nd.right);
  };
  walk(DecisionTree::root());
  return c;
}

}  // namespace

TEST(TreePrior, StumpAndSingleSplit) {
  TreePrior pr;
  DecisionTree t;
  EXPECT_NEAR(tree_log_prior(t, pr), std::log(0.05), 1e-15);
  t.split(0, {0, 0.5});
  EXPECT_NEAR(tree_log_prior(t, pr), std::log(0.95) + 2 * std::log(1 - 0.95 / 4), 1e-15);
}

TEST(TreePrior, MatchesRecursiveOracleOnRandomTrees) {
  Rng g(1);
  const auto x = random_covariates(200, 3, g);
  const TreePrior pr{0.9, 1.5};
  for (int rep = 0; rep < 50; ++rep) {
    const auto t = random_tree(x, 1 + rep % 7, g);
    EXPECT_NEAR(tree_log_prior(t, pr), recursive_log_prior(t, 0, pr), 1e-12);
  }
}

TEST(TreePrior, ForwardSimulationSplitsRootWithProbabilityAlpha) {
  Rng g(2);
  const TreePrior pr;
  const int trees = 100000;
  long root_splits = 0, depth1 = 0, depth1_splits = 0;
  for (int t = 0; t < trees; ++t) {
    if (!bernoulli(g, pr.split_probability(0))) continue;
    ++root_splits;
    for (int c = 0; c < 2; ++c) {
      ++depth1;
      depth1_splits += bernoulli(g, pr.split_probability(1));
    }
  }
  const double f0 = double(root_splits) / trees, f1 = double(depth1_splits) / depth1;
  EXPECT_NEAR(f0, 0.95, 3 * std::sqrt(0.95 * 0.05 / trees));
  EXPECT_NEAR(f1, 0.95 / 4, 3 * std::sqrt(0.2375 * 0.7625 / depth1));
}

TEST(Partition, StumpAndSingleSplit) {
  Rng g(3);
  const auto x = random_covariates(50, 2, g);
  DecisionTree t;
  for (int a : partition_assign(t, x)) EXPECT_EQ(a, 0);
  const auto [l, r] = t.split(0, {0, 0.4});
  const auto a = partition_assign(t, x);
  for (int i = 0; i < x.n(); ++i) EXPECT_EQ(a[i], x(i, 0) <= 0.4 ? l : r);
}

TEST(Partition, TwoSingleSplitsComposeIntoTwoLevelTree) {
  Rng g(4);
  const auto x = random_covariates(300, 2, g);
  DecisionTree a, b, both;
  a.split(0, {0, 0.3});
  b.split(0, {1, 0.6});
  const auto [l, r] = both.split(0, {0, 0.3});
  both.split(l, {1, 0.6});
  both.split(r, {1, 0.6});
  const auto pa = partition_assign(a, x), pb = partition_assign(b, x), pc = partition_assign(both, x);
  std::map<std::pair<int, int>, std::set<int>> image;
  std::map<int, std::set<std::pair<int, int>>> preimage;
  for (int i = 0; i < x.n(); ++i) {
    image[{pa[i], pb[i]}].insert(pc[i]);
    preimage[pc[i]].insert({pa[i], pb[i]});
  }
  for (auto& [k, v] : image) EXPECT_EQ(v.size(), 1u);
  for (auto& [k, v] : preimage) EXPECT_EQ(v.size(), 1u);
  EXPECT_EQ(image.size(), 4u);
}

TEST(Partition, LeafCountsAreExhaustive) {
  Rng g(5);
  const auto x = random_covariates(400, 3, g);
  for (int rep = 0; rep < 20; ++rep) {
    const auto t = random_tree(x, 6, g);
    const auto a = partition_assign(t, x);
    std::map<int, int> counts;
    for (int v : a) {
      ASSERT_TRUE(t.alive(v) && t.is_leaf(v));
      ++counts[v];
    }
    int total = 0;
    for (auto& [leaf, c] : counts) {
      EXPECT_GT(c, 0);  // every split was valid, so no empty leaves
      total += c;
    }
    EXPECT_EQ(total, x.n());
    EXPECT_EQ(static_cast<int>(counts.size()), t.num_leaves());
  }
}

TEST(SplitRule, NoneWhenRowsIdentical) {
  Eigen::MatrixXd m(4, 2);
  m << 1, 2, 1, 2, 1, 2, 1, 2;
  const CovariateMatrix x(m);
  Rng g(6);
  const std::vector<int> rows{0, 1, 2, 3};
  EXPECT_FALSE(sample_split_rule(rows, x, SplitProbabilities::uniform(2), g).has_value());
}

TEST(SplitRule, TwoValuesGiveTheUniqueCut) {
  Eigen::MatrixXd m(5, 1);
  m << 3.0, 1.0, 3.0, 1.0, 1.0;
  const CovariateMatrix x(m);
  Rng g(7);
  const std::vector<int> rows{0, 1, 2, 3, 4};
  for (int t = 0; t < 100; ++t) {
    const auto r = sample_split_rule(rows, x, SplitProbabilities::uniform(1), g);
    ASSERT_TRUE(r);
    EXPECT_EQ(r->covariate, 0);
    EXPECT_EQ(r->cut, 1.0);
  }
}

TEST(SplitRule, DegenerateProbabilitiesPickThatCovariate) {
  Rng g(8);
  const auto x = random_covariates(30, 4, g);
  auto probs = SplitProbabilities::uniform(4);
  probs.s = {1.0, 0.0, 0.0, 0.0};
  std::vector<int> rows(30);
  std::iota(rows.begin(), rows.end(), 0);
  for (int t = 0; t < 200; ++t) EXPECT_EQ(sample_split_rule(rows, x, probs, g)->covariate, 0);
}

TEST(SplitRule, CutUniformOverValidValuesAtTheNode) {
  // Node rows hold values {0, 2, 5, 7}; valid cuts are 0, 2, 5 with equal probability.
  Eigen::MatrixXd m(7, 1);
  m << 0, 2, 5, 7, 9, 2, 5;
  const CovariateMatrix x(m);
  const std::vector<int> rows{0, 1, 2, 3, 5, 6};
  Rng g(9);
  std::map<double, int> freq;
  const int draws = 60000;
  for (int t = 0; t < draws; ++t) ++freq[sample_split_rule(rows, x, SplitProbabilities::uniform(1), g)->cut];
  ASSERT_EQ(freq.size(), 3u);
  for (auto& [cut, c] : freq) {
    EXPECT_TRUE(cut == 0 || cut == 2 || cut == 5);
    EXPECT_NEAR(c / double(draws), 1.0 / 3, 3 * std::sqrt(2.0 / 9 / draws));
  }
}

TEST(Proposal, PruneOnStumpIsInfeasible) {
  Rng g(10);
  const auto x = random_covariates(20, 2, g);
  const DecisionTree t;
  MoveWeights w{0.0, 1.0, 0.0};
  const auto pr = propose_move(t, x, SplitProbabilities::uniform(2), g, w);
  EXPECT_EQ(pr.kind, MoveKind::Prune);
  EXPECT_FALSE(pr.feasible);
  EXPECT_EQ(pr.log_ratio, kNegInf);
  MoveWeights c{0.0, 0.0, 1.0};
  EXPECT_FALSE(propose_move(t, x, SplitProbabilities::uniform(2), g, c).feasible);
}

TEST(Proposal, MoveFrequenciesOnStumpMatchWeights) {
  Rng g(11);
  const auto x = random_covariates(20, 2, g);
  const DecisionTree t;
  const auto a = partition_assign(t, x);
  const MoveWeights w;
  TreeProposal out;
  std::array<long, 3> count{};
  const int draws = 100000;
  for (int k = 0; k < draws; ++k) {
    propose_move(t, a, x, SplitProbabilities::uniform(2), w, g, out);
    ++count[static_cast<int>(out.kind)];
  }
  const double expect[] = {0.28, 0.28, 0.44};
  for (int k = 0; k < 3; ++k)
    EXPECT_NEAR(count[k] / double(draws), expect[k], 3 * std::sqrt(expect[k] * (1 - expect[k]) / draws));
}

TEST(Proposal, GrowRatioMatchesEnumeration) {
  Rng g(12);
  const auto x = random_covariates(60, 2, g, 5);
  const MoveWeights w;
  for (int rep = 0; rep < 200; ++rep) {
    const auto t = random_tree(x, rep % 5, g);
    const auto a = partition_assign(t, x);
    TreeProposal out;
    do propose_move(t, a, x, SplitProbabilities::uniform(2), w, g, out);
    while (out.kind != MoveKind::Grow);
    if (!out.feasible) {
      EXPECT_EQ(count_growable(t, x), 0);
      continue;
    }
    const double fwd = std::log(w.grow / count_growable(t, x));
    const double rev = std::log(w.prune / count_prunable(out.tree));
    EXPECT_NEAR(out.log_ratio, rev - fwd, 1e-12);
    EXPECT_EQ(out.assignment, partition_assign(out.tree, x));
  }
}

TEST(Proposal, PruneRatioMatchesEnumeration) {
  Rng g(13);
  const auto x = random_covariates(60, 2, g, 5);
  const MoveWeights w;
  for (int rep = 0; rep < 200; ++rep) {
    const auto t = random_tree(x, 1 + rep % 5, g);
    const auto a = partition_assign(t, x);
    TreeProposal out;
    do propose_move(t, a, x, SplitProbabilities::uniform(2), w, g, out);
    while (out.kind != MoveKind::Prune);
    ASSERT_TRUE(out.feasible);
    const double fwd = std::log(w.prune / count_prunable(t));
    const double rev = std::log(w.grow / count_growable(out.tree, x));
    EXPECT_NEAR(out.log_ratio, rev - fwd, 1e-12);
    EXPECT_EQ(out.assignment, partition_assign(out.tree, x));
  }
}

TEST(Proposal, GrowThenReversePruneNegate) {
  Rng g(14);
  const auto x = random_covariates(80, 3, g);
  for (int rep = 0; rep < 50; ++rep) {
    const auto t = random_tree(x, rep % 4, g);
    TreeProposal grow;
    do propose_move(t, partition_assign(t, x), x, SplitProbabilities::uniform(3), MoveWeights{}, g, grow);
    while (grow.kind != MoveKind::Grow);
    ASSERT_TRUE(grow.feasible);
    TreeProposal prune;
    for (int tries = 0; tries < 1000; ++tries) {
      propose_move(grow.tree, grow.assignment, x, SplitProbabilities::uniform(3), MoveWeights{}, g, prune);
      if (prune.kind == MoveKind::Prune && prune.node == grow.node) break;
    }
    ASSERT_EQ(prune.node, grow.node);
    EXPECT_TRUE(prune.tree.same_as(t));
    EXPECT_NEAR(grow.log_ratio + prune.log_ratio, 0.0, 1e-12);
  }
}

TEST(Proposal, ChangeKeepsEveryLeafNonempty) {
  Rng g(15);
  const auto x = random_covariates(40, 2, g, 4);
  int feasible = 0, rejected = 0;
  for (int rep = 0; rep < 2000; ++rep) {
    const auto t = random_tree(x, 1 + rep % 4, g);
    TreeProposal out;
    propose_move(t, partition_assign(t, x), x, SplitProbabilities::uniform(2), MoveWeights{0, 0, 1}, g, out);
    if (!out.feasible) {
      ++rejected;
      continue;
    }
    ++feasible;
    EXPECT_EQ(out.log_ratio, 0.0);
    EXPECT_EQ(out.assignment, partition_assign(out.tree, x));
    std::set<int> used(out.assignment.begin(), out.assignment.end());
    EXPECT_EQ(static_cast<int>(used.size()), out.tree.num_leaves());
  }
  EXPECT_GT(feasible, 0);
  EXPECT_GT(rejected, 0);  // coarse covariates make some descendant leaves empty
}

TEST(Proposal, MetropolisChainTargetsTreePrior) {
  // With a flat likelihood the structure chain must sample the tree prior. On
  // continuous data every leaf is splittable, so the leaf-count distribution
  // matches forward simulation of the branching process.
  Rng g(16);
  const auto x = random_covariates(2000, 2, g);
  const TreePrior pr;
  const auto probs = SplitProbabilities::uniform(2);
  DecisionTree t;
  auto a = partition_assign(t, x);
  TreeProposal out;
  std::map<int, long> chain;
  const int iters = 200000;
  for (int it = 0; it < iters; ++it) {
    propose_move(t, a, x, probs, MoveWeights{}, g, out);
    if (out.feasible) {
      const double lr = tree_log_prior(out.tree, pr) - tree_log_prior(t, pr) + out.log_ratio;
      if (std::log(uniform01(g)) < lr) {
        std::swap(t, out.tree);
        std::swap(a, out.assignment);
      }
    }
    ++chain[std::min(t.num_leaves(), 5)];
  }
  std::map<int, long> forward;
  const int sims = 400000;
  std::function<int(int)> leaves = [&](int depth) {
    return bernoulli(g, pr.split_probability(depth)) ? leaves(depth + 1) + leaves(depth + 1) : 1;
  };
  for (int s = 0; s < sims; ++s) ++forward[std::min(leaves(0), 5)];
  for (int k = 1; k <= 5; ++k) {
    const double pc = chain[k] / double(iters), pf = forward[k] / double(sims);
    // Chain draws are autocorrelated; 0.01 absolute is several effective standard errors.
    EXPECT_NEAR(pc, pf, 0.01) << k << " leaves";
  }
}

TEST(Serialization, RoundTripsExactly) {
  Rng g(17);
  const auto x = random_covariates(100, 3, g);
  for (int rep = 0; rep < 30; ++rep) {
    const auto t = random_tree(x, rep % 8, g);
    const auto s = t.serialize();
    const auto back = DecisionTree::deserialize(s);
    EXPECT_EQ(back.serialize(), s);
    for (int i = 0; i < x.n(); ++i) EXPECT_EQ(back.value(back.find_leaf(x, i)), t.value(t.find_leaf(x, i)));
  }
  EXPECT_EQ(DecisionTree(0.25).serialize(), "0:L:0.25");
  EXPECT_THROW(DecisionTree::deserialize("0:S:0:1.5 1:L:0"), ValidationError);
  EXPECT_THROW(DecisionTree::deserialize("0:X:1"), ValidationError);
}

TEST(CompactForest, MatchesTreesAndUnpacks) {
  Rng g(18);
  const auto x = random_covariates(100, 3, g);
  CompactForest cf;
  std::vector<DecisionTree> trees;
  for (int h = 0; h < 10; ++h) {
    trees.push_back(random_tree(x, h % 6, g));
    cf.append(trees.back());
  }
  for (int i = 0; i < x.n(); ++i) {
    auto row = [&](int k) { return x(i, k); };
    double s = 0.0;
    for (std::size_t h = 0; h < trees.size(); ++h) {
      const double v = trees[h].value(trees[h].find_leaf(x, i));
      EXPECT_EQ(cf.tree_value(h, row), v);
      s += v;
    }
    EXPECT_NEAR(cf.sum(row), s, 1e-12);
  }
  for (std::size_t h = 0; h < trees.size(); ++h) EXPECT_TRUE(cf.tree(h).same_as(trees[h]));
}

TEST(SparseSplits, DisabledLeavesUniform) {
  Rng g(19);
  auto probs = SplitProbabilities::uniform(4, false);
  const std::vector<int> counts{10, 0, 0, 0};
  update_split_probabilities(counts, probs, g);
  for (double s : probs.s) EXPECT_EQ(s, 0.25);
}

TEST(SparseSplits, DominantCountConcentratesMass) {
  Rng g(20);
  const std::vector<int> counts{100, 0, 0, 0, 0};
  RunningMoments m;
  for (int t = 0; t < 20000; ++t) m.push(draw_split_probabilities(counts, 0.5, g)[0]);
  // Dirichlet posterior mean (omega/p + 100) / (omega + 100).
  EXPECT_NEAR(m.mean, (0.1 + 100) / 100.5, 4 * m.std_error());
  EXPECT_GT(m.mean, 0.9);
}

TEST(SparseSplits, LargeOmegaGivesNearUniform) {
  Rng g(21);
  const std::vector<int> counts(4, 0);
  const auto s = draw_split_probabilities(counts, 1e7, g);
  for (double v : s) EXPECT_NEAR(v, 0.25, 2e-3);
}

TEST(SparseSplits, OmegaChainRecoversBetaPriorWithoutSplits) {
  // No split counts: xi = omega / (omega + rho) must follow Beta(0.5, 1), mean 1/3.
  Rng g(22);
  auto probs = SplitProbabilities::uniform(5, true);
  const std::vector<int> counts(5, 0);
  RunningMoments m;
  for (int t = 0; t < 100000; ++t) {
    update_split_probabilities(counts, probs, g);
    m.push(probs.omega / (probs.omega + probs.rho));
    double s = 0.0;
    for (double v : probs.s) s += v;
    ASSERT_NEAR(s, 1.0, 1e-12);
  }
  EXPECT_NEAR(m.mean, 1.0 / 3, 0.01);
}

TEST(SparseSplits, LogMarginalMatchesDirect) {
  // Dirichlet-multinomial for a sequence of 3 splits: (1, 2, 0) with omega = 1.5, p = 3.
  const std::vector<int> counts{1, 2, 0};
  const double a = 0.5;
  const double direct = std::log(a / 1.5 * a / 2.5 * (a + 1) / 3.5);
  EXPECT_NEAR(split_count_log_marginal(counts, 1.5), direct, 1e-12);
}
