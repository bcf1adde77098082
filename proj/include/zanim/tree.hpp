#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "zanim/errors.hpp"
#include "zanim/numerics.hpp"
#include "zanim/rng.hpp"

namespace zanim {

// Covariates with per-column ranks of the distinct observed values, used to
// enumerate valid cut points quickly.
class CovariateMatrix {
 public:
  CovariateMatrix() = default;
  explicit CovariateMatrix(Eigen::MatrixXd x, std::vector<std::string> names = {})
      : x_(std::move(x)), names_(std::move(names)) {
    require(x_.allFinite(), "covariates must be finite");
    if (names_.empty())
      for (Eigen::Index k = 0; k < x_.cols(); ++k) names_.push_back("x" + std::to_string(k + 1));
    require(static_cast<Eigen::Index>(names_.size()) == x_.cols(), "covariate names do not match columns");
    const int n = this->n();
    ranks_.resize(static_cast<std::size_t>(n) * p());
    uniques_.resize(p());
    for (int k = 0; k < p(); ++k) {
      auto& u = uniques_[k];
      u.assign(x_.col(k).data(), x_.col(k).data() + n);
      std::sort(u.begin(), u.end());
      u.erase(std::unique(u.begin(), u.end()), u.end());
      for (int i = 0; i < n; ++i)
        ranks_[static_cast<std::size_t>(k) * n + i] =
            static_cast<int>(std::lower_bound(u.begin(), u.end(), x_(i, k)) - u.begin());
    }
  }

  int n() const { return static_cast<int>(x_.rows()); }
  int p() const { return static_cast<int>(x_.cols()); }
  double operator()(int i, int k) const { return x_(i, k); }
  int rank(int i, int k) const { return ranks_[static_cast<std::size_t>(k) * n() + i]; }
  int num_unique(int k) const { return static_cast<int>(uniques_[k].size()); }
  double unique_value(int k, int r) const { return uniques_[k][r]; }
  const Eigen::MatrixXd& values() const { return x_; }
  const std::vector<std::string>& names() const { return names_; }

 private:
  Eigen::MatrixXd x_;
  std::vector<std::string> names_;
  std::vector<int> ranks_;
  std::vector<std::vector<double>> uniques_;
};

struct SplitRule {
  int covariate = -1;
  double cut = 0.0;  // x <= cut goes left
  bool operator==(const SplitRule&) const = default;
};

struct TreePrior {
  double alpha = 0.95;
  double beta = 2.0;
  double split_probability(int depth) const { return alpha * std::pow(1.0 + depth, -beta); }
};

struct MoveWeights {
  double grow = 0.28;
  double prune = 0.28;
  double change = 0.44;
};

enum class MoveKind { Grow = 0, Prune = 1, Change = 2 };

class DecisionTree {
 public:
  struct Node {
    int parent = -1;  // -2 marks a free slot
    int left = -1;
    int right = -1;
    int depth = 0;
    int covariate = -1;
    double cut = 0.0;
    double value = 0.0;
  };

  explicit DecisionTree(double root_value = 0.0) { nodes_.push_back(Node{-1, -1, -1, 0, -1, 0.0, root_value}); }

  static constexpr int root() { return 0; }
  int capacity() const { return static_cast<int>(nodes_.size()); }
  bool alive(int id) const { return nodes_[id].parent != -2; }
  bool is_leaf(int id) const { return nodes_[id].left < 0; }
  const Node& node(int id) const { return nodes_[id]; }
  double value(int id) const { return nodes_[id].value; }
  void set_value(int id, double v) { nodes_[id].value = v; }

  void leaves(std::vector<int>& out) const {
    out.clear();
    for (int id = 0; id < capacity(); ++id)
      if (alive(id) && is_leaf(id)) out.push_back(id);
  }
  std::vector<int> leaves() const {
    std::vector<int> out;
    leaves(out);
    return out;
  }
  std::vector<int> internal_nodes() const {
    std::vector<int> out;
    for (int id = 0; id < capacity(); ++id)
      if (alive(id) && !is_leaf(id)) out.push_back(id);
    return out;
  }
  // Internal nodes whose children are both leaves (the prunable ones).
  std::vector<int> nog_nodes() const {
    std::vector<int> out;
    for (int id = 0; id < capacity(); ++id)
      if (alive(id) && !is_leaf(id) && is_leaf(nodes_[id].left) && is_leaf(nodes_[id].right)) out.push_back(id);
    return out;
  }
  int num_leaves() const {
    int c = 0;
    for (int id = 0; id < capacity(); ++id) c += alive(id) && is_leaf(id);
    return c;
  }

  template <class Row>
  int find_leaf_from(int id, const Row& x) const {
    while (!is_leaf(id)) {
      const Node& nd = nodes_[id];
      id = x(nd.covariate) <= nd.cut ? nd.left : nd.right;
    }
    return id;
  }
  int find_leaf(const CovariateMatrix& x, int i) const {
    return find_leaf_from(root(), [&](int k) { return x(i, k); });
  }

  std::pair<int, int> split(int leaf, SplitRule rule) {
    const int l = allocate(), r = allocate();
    Node& nd = nodes_[leaf];
    nd.covariate = rule.covariate;
    nd.cut = rule.cut;
    nd.left = l;
    nd.right = r;
    nodes_[l] = Node{leaf, -1, -1, nd.depth + 1, -1, 0.0, nd.value};
    nodes_[r] = Node{leaf, -1, -1, nd.depth + 1, -1, 0.0, nd.value};
    return {l, r};
  }

  void set_rule(int id, SplitRule rule) {
    nodes_[id].covariate = rule.covariate;
    nodes_[id].cut = rule.cut;
  }

  // Turns an internal node into a leaf, discarding its descendants.
  void collapse(int id) {
    if (is_leaf(id)) return;
    release(nodes_[id].left);
    release(nodes_[id].right);
    nodes_[id].left = nodes_[id].right = -1;
    nodes_[id].covariate = -1;
    nodes_[id].cut = 0.0;
  }

  bool in_subtree(int ancestor, int id) const {
    while (id >= 0) {
      if (id == ancestor) return true;
      id = nodes_[id].parent;
    }
    return false;
  }

  // Preorder text form: "depth:S:covariate:cut" for splits and "depth:L:value" for leaves.
  std::string serialize() const {
    std::string out;
    serialize_node(root(), out);
    if (!out.empty()) out.pop_back();
    return out;
  }

  static DecisionTree deserialize(std::string_view text) {
    std::vector<std::string_view> tokens;
    std::size_t pos = 0;
    while (pos < text.size()) {
      const auto end = text.find(' ', pos);
      const auto tok = text.substr(pos, end == std::string_view::npos ? std::string_view::npos : end - pos);
      if (!tok.empty()) tokens.push_back(tok);
      if (end == std::string_view::npos) break;
      pos = end + 1;
    }
    require(!tokens.empty(), "empty tree text");
    DecisionTree t;
    std::size_t next = 0;
    t.parse_node(root(), 0, tokens, next);
    require(next == tokens.size(), "trailing tokens in tree text");
    return t;
  }

  // Structural equality in preorder, independent of slot numbering.
  bool same_as(const DecisionTree& o) const { return serialize() == o.serialize(); }

 private:
  std::vector<Node> nodes_;
  std::vector<int> free_;

  int allocate() {
    if (!free_.empty()) {
      // Reuse the smallest free slot so numbering is a function of the move history.
      auto it = std::min_element(free_.begin(), free_.end());
      const int id = *it;
      free_.erase(it);
      return id;
    }
    nodes_.emplace_back();
    return capacity() - 1;
  }
  void release(int id) {
    if (!is_leaf(id)) {
      release(nodes_[id].left);
      release(nodes_[id].right);
    }
    nodes_[id] = Node{};
    nodes_[id].parent = -2;
    free_.push_back(id);
  }

  static void append_double(std::string& out, double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    out.append(buf, res.ptr);
  }
  void serialize_node(int id, std::string& out) const {
    const Node& nd = nodes_[id];
    out += std::to_string(nd.depth);
    if (is_leaf(id)) {
      out += ":L:";
      append_double(out, nd.value);
      out += ' ';
      return;
    }
    out += ":S:" + std::to_string(nd.covariate) + ':';
    append_double(out, nd.cut);
    out += ' ';
    serialize_node(nd.left, out);
    serialize_node(nd.right, out);
  }

  static double parse_double(std::string_view s) {
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    require(res.ec == std::errc() && res.ptr == s.data() + s.size(), "bad number in tree text: " + std::string(s));
    return v;
  }
  void parse_node(int id, int depth, const std::vector<std::string_view>& tokens, std::size_t& next) {
    require(next < tokens.size(), "truncated tree text");
    const auto tok = tokens[next++];
    const auto c1 = tok.find(':');
    require(c1 != std::string_view::npos && c1 + 2 < tok.size() && tok[c1 + 2] == ':', "bad tree token");
    require(static_cast<int>(parse_double(tok.substr(0, c1))) == depth, "tree depth mismatch");
    const char kind = tok[c1 + 1];
    const auto rest = tok.substr(c1 + 3);
    if (kind == 'L') {
      nodes_[id].value = parse_double(rest);
      return;
    }
    require(kind == 'S', "bad tree token kind");
    const auto c2 = rest.find(':');
    require(c2 != std::string_view::npos, "bad split token");
    SplitRule rule{static_cast<int>(parse_double(rest.substr(0, c2))), parse_double(rest.substr(c2 + 1))};
    const auto [l, r] = split(id, rule);
    parse_node(l, depth + 1, tokens, next);
    parse_node(r, depth + 1, tokens, next);
  }
};

inline double tree_log_prior(const DecisionTree& t, const TreePrior& prior) {
  double lp = 0.0;
  for (int id = 0; id < t.capacity(); ++id) {
    if (!t.alive(id)) continue;
    const double ps = prior.split_probability(t.node(id).depth);
    lp += t.is_leaf(id) ? std::log1p(-ps) : std::log(ps);
  }
  return lp;
}

// Leaf slot id for every row.
inline std::vector<int> partition_assign(const DecisionTree& t, const CovariateMatrix& x) {
  std::vector<int> a(x.n());
  for (int i = 0; i < x.n(); ++i) a[i] = t.find_leaf(x, i);
  return a;
}

// Number of splitting rules using each covariate.
inline void add_split_counts(const DecisionTree& t, std::span<int> counts) {
  for (int id = 0; id < t.capacity(); ++id)
    if (t.alive(id) && !t.is_leaf(id)) ++counts[t.node(id).covariate];
}

struct SplitProbabilities {
  std::vector<double> s;
  bool sparse = false;
  double omega = 1.0;
  double rho = 1.0;
  double a = 0.5;  // Beta prior on omega / (omega + rho)
  double b = 1.0;

  static SplitProbabilities uniform(int p, bool sparse = false) {
    SplitProbabilities sp;
    sp.s.assign(p, 1.0 / p);
    sp.sparse = sparse;
    sp.rho = p;
    sp.omega = p;
    return sp;
  }
};

namespace detail {

// Distinct-value marks by rank; the epoch trick avoids clearing between calls.
struct RankMarks {
  std::vector<std::uint32_t> stamp;
  std::uint32_t epoch = 0;
  void next(std::size_t size) {
    if (stamp.size() < size) stamp.resize(size, 0);
    if (++epoch == 0) {
      std::fill(stamp.begin(), stamp.end(), 0);
      epoch = 1;
    }
  }
};

inline RankMarks& rank_marks() {
  thread_local RankMarks marks;
  return marks;
}

inline bool has_two_values(std::span<const int> rows, const CovariateMatrix& x, int k) {
  if (rows.empty()) return false;
  const double first = x(rows[0], k);
  for (std::size_t t = 1; t < rows.size(); ++t)
    if (x(rows[t], k) != first) return true;
  return false;
}

}  // namespace detail

// Draws a rule valid for `rows`: a covariate with at least two distinct values there
// (chosen with probability proportional to s), then a cut uniformly among the
// distinct values except the largest, so both children are nonempty.
template <class G>
std::optional<SplitRule> sample_split_rule(std::span<const int> rows, const CovariateMatrix& x,
                                           const SplitProbabilities& probs, G& rng) {
  const int p = x.p();
  thread_local std::vector<double> weights;
  weights.assign(p, 0.0);
  double total = 0.0;
  for (int k = 0; k < p; ++k) {
    if (probs.s[k] > 0.0 && detail::has_two_values(rows, x, k)) {
      weights[k] = probs.s[k];
      total += probs.s[k];
    }
  }
  if (!(total > 0.0)) return std::nullopt;
  double u = uniform01(rng) * total;
  int k = 0;
  for (; k < p - 1; ++k) {
    if (weights[k] > 0.0 && u < weights[k]) break;
    u -= weights[k];
  }
  while (weights[k] <= 0.0) --k;  // guard against rounding past the last valid entry

  auto& marks = detail::rank_marks();
  const int nu = x.num_unique(k);
  marks.next(static_cast<std::size_t>(nu));
  int distinct = 0;
  for (int i : rows) {
    auto& st = marks.stamp[x.rank(i, k)];
    if (st != marks.epoch) {
      st = marks.epoch;
      ++distinct;
    }
  }
  const int pick = static_cast<int>(uniform01(rng) * (distinct - 1));
  int seen = 0;
  for (int r = 0; r < nu; ++r) {
    if (marks.stamp[r] != marks.epoch) continue;
    if (seen++ == pick) return SplitRule{k, x.unique_value(k, r)};
  }
  throw NumericError("split rule selection fell through");
}

// Leaves holding at least two distinct covariate vectors, in slot order.
inline std::vector<int> growable_leaves(const DecisionTree& t, std::span<const int> assignment,
                                        const CovariateMatrix& x) {
  const int cap = t.capacity();
  thread_local std::vector<int> first;
  thread_local std::vector<char> growable;
  first.assign(cap, -1);
  growable.assign(cap, 0);
  const int p = x.p();
  for (int i = 0; i < static_cast<int>(assignment.size()); ++i) {
    const int l = assignment[i];
    if (growable[l]) continue;
    if (first[l] < 0) {
      first[l] = i;
      continue;
    }
    for (int k = 0; k < p; ++k) {
      if (x(i, k) != x(first[l], k)) {
        growable[l] = 1;
        break;
      }
    }
  }
  std::vector<int> out;
  for (int id = 0; id < cap; ++id)
    if (growable[id] && t.alive(id) && t.is_leaf(id)) out.push_back(id);
  return out;
}

struct TreeProposal {
  DecisionTree tree;
  std::vector<int> assignment;
  MoveKind kind = MoveKind::Grow;
  int node = -1;
  bool feasible = false;
  // log q(T | T') - log q(T' | T). Rule-selection probabilities appear in both the
  // tree prior and the kernel and cancel, so they are left out of both.
  double log_ratio = kNegInf;
};

template <class G>
void propose_move(const DecisionTree& tree, std::span<const int> assignment, const CovariateMatrix& x,
                  const SplitProbabilities& probs, const MoveWeights& w, G& rng, TreeProposal& out) {
  out.tree = tree;
  out.assignment.assign(assignment.begin(), assignment.end());
  out.feasible = false;
  out.log_ratio = kNegInf;
  out.node = -1;

  const double u = uniform01(rng) * (w.grow + w.prune + w.change);
  out.kind = u < w.grow ? MoveKind::Grow : (u < w.grow + w.prune ? MoveKind::Prune : MoveKind::Change);
  const int n = static_cast<int>(assignment.size());
  thread_local std::vector<int> rows;

  if (out.kind == MoveKind::Grow) {
    const auto grow = growable_leaves(tree, assignment, x);
    if (grow.empty()) return;
    const int leaf = grow[static_cast<std::size_t>(uniform01(rng) * grow.size())];
    rows.clear();
    for (int i = 0; i < n; ++i)
      if (assignment[i] == leaf) rows.push_back(i);
    const auto rule = sample_split_rule(rows, x, probs, rng);
    if (!rule) return;
    const auto [l, r] = out.tree.split(leaf, *rule);
    for (int i : rows) out.assignment[i] = x(i, rule->covariate) <= rule->cut ? l : r;
    const auto nog = out.tree.nog_nodes().size();
    out.node = leaf;
    out.feasible = true;
    out.log_ratio = std::log(w.prune / static_cast<double>(nog)) - std::log(w.grow / static_cast<double>(grow.size()));
    return;
  }

  if (out.kind == MoveKind::Prune) {
    const auto nog = tree.nog_nodes();
    if (nog.empty()) return;
    const int id = nog[static_cast<std::size_t>(uniform01(rng) * nog.size())];
    const int l = tree.node(id).left, r = tree.node(id).right;
    out.tree.collapse(id);
    for (auto& a : out.assignment)
      if (a == l || a == r) a = id;
    const auto grow = growable_leaves(out.tree, out.assignment, x);
    out.node = id;
    out.feasible = true;
    out.log_ratio = std::log(w.grow / static_cast<double>(grow.size())) - std::log(w.prune / static_cast<double>(nog.size()));
    return;
  }

  const auto internal = tree.internal_nodes();
  if (internal.empty()) return;
  const int id = internal[static_cast<std::size_t>(uniform01(rng) * internal.size())];
  out.node = id;
  rows.clear();
  for (int i = 0; i < n; ++i)
    if (tree.in_subtree(id, assignment[i])) rows.push_back(i);
  const auto rule = sample_split_rule(rows, x, probs, rng);
  if (!rule) return;
  out.tree.set_rule(id, *rule);
  thread_local std::vector<int> occupancy;
  occupancy.assign(out.tree.capacity(), 0);
  for (int i : rows) {
    const int leaf = out.tree.find_leaf_from(id, [&](int k) { return x(i, k); });
    out.assignment[i] = leaf;
    ++occupancy[leaf];
  }
  for (int leaf = 0; leaf < out.tree.capacity(); ++leaf)
    if (out.tree.alive(leaf) && out.tree.is_leaf(leaf) && out.tree.in_subtree(id, leaf) && occupancy[leaf] == 0)
      return;  // empty descendant leaf: rejected outright
  out.feasible = true;
  out.log_ratio = 0.0;
}

template <class G>
TreeProposal propose_move(const DecisionTree& tree, const CovariateMatrix& x, const SplitProbabilities& probs,
                          G& rng, const MoveWeights& w = {}) {
  TreeProposal out;
  const auto a = partition_assign(tree, x);
  propose_move(tree, a, x, probs, w, rng, out);
  return out;
}

// s | counts, omega ~ Dirichlet(omega/p + counts).
template <class G>
std::vector<double> draw_split_probabilities(std::span<const int> counts, double omega, G& rng) {
  const double base = omega / static_cast<double>(counts.size());
  std::vector<double> conc(counts.size());
  for (std::size_t k = 0; k < counts.size(); ++k) conc[k] = base + counts[k];
  return dirichlet(rng, conc);
}

// Dirichlet-multinomial log marginal of split counts given omega (s integrated out).
inline double split_count_log_marginal(std::span<const int> counts, double omega) {
  const double p = static_cast<double>(counts.size());
  double total = 0.0, lm = 0.0;
  for (int c : counts) {
    total += c;
    lm += std::lgamma(omega / p + c) - std::lgamma(omega / p);
  }
  return lm + std::lgamma(omega) - std::lgamma(omega + total);
}

// Sparse prior update: omega by slice sampling on xi = omega/(omega+rho) under its
// Beta prior with s integrated out, then s from its Dirichlet full conditional.
template <class G>
void update_split_probabilities(std::span<const int> counts, SplitProbabilities& probs, G& rng) {
  if (!probs.sparse) return;
  require(counts.size() == probs.s.size(), "split counts do not match the number of covariates");
  auto log_post = [&](double xi) {
    if (!(xi > 0.0 && xi < 1.0)) return kNegInf;
    const double omega = probs.rho * xi / (1.0 - xi);
    return split_count_log_marginal(counts, omega) + (probs.a - 1.0) * std::log(xi) +
           (probs.b - 1.0) * std::log1p(-xi);
  };
  const double xi0 = probs.omega / (probs.omega + probs.rho);
  const double xi = slice_sample(xi0, log_post, 0.25, rng, 0.0, 1.0);
  probs.omega = probs.rho * xi / (1.0 - xi);
  probs.s = draw_split_probabilities(counts, probs.omega, rng);
}

// Preorder, array-packed forest used for stored posterior snapshots.
class CompactForest {
 public:
  struct Entry {
    std::int32_t covariate;  // -1 for a leaf
    std::int32_t right;      // offset from this entry to its right child
    double value;            // cut for splits, parameter for leaves
  };

  void append(const DecisionTree& t) {
    starts_.push_back(static_cast<std::int32_t>(entries_.size()));
    pack(t, DecisionTree::root());
  }
  std::size_t size() const { return starts_.size(); }

  template <class Row>
  double tree_value(std::size_t tree, const Row& x) const {
    std::size_t pos = static_cast<std::size_t>(starts_[tree]);
    while (entries_[pos].covariate >= 0) {
      const Entry& e = entries_[pos];
      pos += x(e.covariate) <= e.value ? 1 : static_cast<std::size_t>(e.right);
    }
    return entries_[pos].value;
  }
  template <class Row>
  double sum(const Row& x) const {
    double s = 0.0;
    for (std::size_t t = 0; t < size(); ++t) s += tree_value(t, x);
    return s;
  }
  DecisionTree tree(std::size_t t) const {
    DecisionTree out;
    std::size_t pos = static_cast<std::size_t>(starts_[t]);
    unpack(out, DecisionTree::root(), pos);
    return out;
  }

 private:
  std::vector<Entry> entries_;
  std::vector<std::int32_t> starts_;

  void pack(const DecisionTree& t, int id) {
    const auto& nd = t.node(id);
    if (t.is_leaf(id)) {
      entries_.push_back({-1, 0, nd.value});
      return;
    }
    const std::size_t at = entries_.size();
    entries_.push_back({nd.covariate, 0, nd.cut});
    pack(t, nd.left);
    entries_[at].right = static_cast<std::int32_t>(entries_.size() - at);
    pack(t, nd.right);
  }
  void unpack(DecisionTree& out, int id, std::size_t& pos) const {
    const Entry e = entries_[pos++];
    if (e.covariate < 0) {
      out.set_value(id, e.value);
      return;
    }
    const auto [l, r] = out.split(id, SplitRule{e.covariate, e.value});
    unpack(out, l, pos);
    unpack(out, r, pos);
  }
};

}  // namespace zanim
