#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "ivbart/core.hpp"
#include "ivbart/data.hpp"

namespace ivbart::bart {

// One node of a regression tree. Nodes live in a per-tree pool and refer
// to each other by index; index 0 is always the root.
struct TreeNode {
  int parent = -1;
  int left = -1;
  int right = -1;
  int split_var = -1;
  int cut_index = -1;
  int depth = 0;
  double leaf_value = 0.0;
  bool live = true;

  bool is_leaf() const { return left < 0; }
};

class Tree {
 public:
  Tree() { nodes_.push_back(TreeNode{}); }

  const std::vector<TreeNode>& nodes() const { return nodes_; }
  const TreeNode& node(int i) const { return nodes_[static_cast<std::size_t>(i)]; }
  TreeNode& node(int i) { return nodes_[static_cast<std::size_t>(i)]; }
  std::size_t pool_size() const { return nodes_.size(); }

  bool root_only() const { return nodes_[0].is_leaf(); }

  // Splits a leaf; returns the index of the new left child (right is
  // node(leaf).right).
  int grow(int leaf, int var, int cut) {
    const int l = allocate();
    const int r = allocate();
    TreeNode& p = node(leaf);
    p.left = l;
    p.right = r;
    p.split_var = var;
    p.cut_index = cut;
    for (int c : {l, r}) {
      TreeNode& ch = node(c);
      ch = TreeNode{};
      ch.parent = leaf;
      ch.depth = node(leaf).depth + 1;
    }
    return l;
  }

  // Collapses an internal node whose children are both leaves.
  void prune(int at) {
    TreeNode& p = node(at);
    release(p.left);
    release(p.right);
    p.left = p.right = -1;
    p.split_var = p.cut_index = -1;
  }

  std::vector<int> leaves() const {
    std::vector<int> out;
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      if (nodes_[i].live && nodes_[i].is_leaf()) out.push_back(static_cast<int>(i));
    return out;
  }

  // Internal nodes with two leaf children ("no grandchildren").
  std::vector<int> nogs() const {
    std::vector<int> out;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const auto& nd = nodes_[i];
      if (nd.live && !nd.is_leaf() && node(nd.left).is_leaf() && node(nd.right).is_leaf())
        out.push_back(static_cast<int>(i));
    }
    return out;
  }

  int max_depth() const {
    int d = 0;
    for (const auto& nd : nodes_)
      if (nd.live && nd.is_leaf()) d = std::max(d, nd.depth);
    return d;
  }

 private:
  int allocate() {
    if (!free_.empty()) {
      int i = free_.back();
      free_.pop_back();
      return i;
    }
    nodes_.push_back(TreeNode{});
    return static_cast<int>(nodes_.size() - 1);
  }
  void release(int i) {
    node(i).live = false;
    free_.push_back(i);
  }

  std::vector<TreeNode> nodes_;
  std::vector<int> free_;
};

// Regression target with known per-observation error sd: resp_k = g(x_row(k)) + N(0, w_k^2).
// `rows` maps each observation to a training row of the forest; when empty,
// observation k maps to row k mod n, so a target of length 2n repeats the
// design twice.
struct HeteroTarget {
  Eigen::VectorXd resp;
  Eigen::VectorXd w;
  std::vector<std::size_t> rows;
};

struct LeafPosterior {
  double mean = 0.0;
  double variance = 0.0;
};

// Conjugate normal update for one leaf with N(0, tau^2) prior, given the
// precision sum P = sum 1/w^2 and the weighted response sum S = sum r/w^2.
inline LeafPosterior leaf_posterior(double precision_sum, double weighted_sum, double tau) {
  const double post_prec = precision_sum + 1.0 / (tau * tau);
  return {weighted_sum / post_prec, 1.0 / post_prec};
}

// Log marginal likelihood of a leaf (up to terms shared by all tree
// configurations).
inline double leaf_log_marginal(double precision_sum, double weighted_sum, double tau) {
  const double t2 = tau * tau;
  return -0.5 * std::log1p(t2 * precision_sum) +
         0.5 * weighted_sum * weighted_sum / (precision_sum + 1.0 / t2);
}

enum class FunctionRole { f, h };

class Forest {
 public:
  Forest(const Eigen::MatrixXd& covariates, int num_trees, double sigma_marginal,
         double depth_base, double depth_power, int num_cutpoints)
      : n_(static_cast<std::size_t>(covariates.rows())),
        p_(static_cast<std::size_t>(covariates.cols())),
        base_(depth_base),
        power_(depth_power),
        leaf_sd_(sigma_marginal / std::sqrt(static_cast<double>(num_trees))),
        trees_(static_cast<std::size_t>(num_trees)),
        leaf_of_(static_cast<std::size_t>(num_trees), std::vector<int>(n_, 0)),
        fits_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_))) {
    if (n_ == 0) throw Error("forest needs a nonempty covariate matrix");
    if (num_trees < 1) throw Error("forest needs at least one tree");
    build_grids(covariates, num_cutpoints);
  }

  std::size_t n() const { return n_; }
  std::size_t width() const { return p_; }
  std::size_t num_trees() const { return trees_.size(); }
  double leaf_sd() const { return leaf_sd_; }
  const Eigen::VectorXd& fits() const { return fits_; }
  const std::vector<Tree>& trees() const { return trees_; }
  const std::vector<std::vector<double>>& cutpoint_grids() const { return cuts_; }

  // Disables grow/prune so that only leaf values are redrawn.
  void set_structure_moves(bool enabled) { moves_enabled_ = enabled; }

  double split_probability(int depth) const {
    return base_ * std::pow(1.0 + depth, -power_);
  }

  double mean_tree_depth() const {
    double s = 0.0;
    for (const auto& t : trees_) s += t.max_depth();
    return s / static_cast<double>(trees_.size());
  }

  // Replaces tree j (structure and leaf values) and refreshes the caches.
  void set_tree(std::size_t j, Tree tree) {
    trees_.at(j) = std::move(tree);
    for (std::size_t r = 0; r < n_; ++r) leaf_of_[j][r] = descend(trees_[j], r);
    fits_ = recompute_fits();
  }

  // One backfitting pass over all trees.
  void sweep(const HeteroTarget& target, Random& rng) {
    accumulate_target(target);
    for (std::size_t j = 0; j < trees_.size(); ++j) update_tree(j, rng);
  }

  Eigen::VectorXd recompute_fits() const {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_));
    for (const auto& tree : trees_)
      for (std::size_t r = 0; r < n_; ++r)
        out(static_cast<Eigen::Index>(r)) += tree.node(descend(tree, r)).leaf_value;
    return out;
  }

  Eigen::VectorXd predict(const Eigen::MatrixXd& covariates) const {
    if (static_cast<std::size_t>(covariates.cols()) != p_)
      throw Error("forest_predict: covariate width " + std::to_string(covariates.cols()) +
                  " does not match training width " + std::to_string(p_));
    Eigen::VectorXd out = Eigen::VectorXd::Zero(covariates.rows());
    for (const auto& tree : trees_) {
      for (Eigen::Index i = 0; i < covariates.rows(); ++i) {
        int k = 0;
        while (!tree.node(k).is_leaf()) {
          const auto& nd = tree.node(k);
          const double cut = cuts_[static_cast<std::size_t>(nd.split_var)][static_cast<std::size_t>(nd.cut_index)];
          k = covariates(i, nd.split_var) <= cut ? nd.left : nd.right;
        }
        out(i) += tree.node(k).leaf_value;
      }
    }
    return out;
  }

 private:
  struct Range {
    int lo;
    int hi;
  };

  void build_grids(const Eigen::MatrixXd& x, int num_cutpoints) {
    cuts_.assign(p_, {});
    for (std::size_t v = 0; v < p_; ++v) {
      const auto col = x.col(static_cast<Eigen::Index>(v));
      const double lo = col.minCoeff();
      const double hi = col.maxCoeff();
      if (!(hi > lo)) continue;
      const double step = (hi - lo) / (num_cutpoints + 1);
      for (int k = 1; k <= num_cutpoints; ++k) cuts_[v].push_back(lo + k * step);
    }
    // bin(r, v) = index of the first cut >= x(r, v); x <= cut[c] iff bin <= c.
    bins_.assign(n_ * p_, 0);
    for (std::size_t r = 0; r < n_; ++r)
      for (std::size_t v = 0; v < p_; ++v) {
        const auto& g = cuts_[v];
        const double val = x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(v));
        bins_[r * p_ + v] = static_cast<std::uint16_t>(std::lower_bound(g.begin(), g.end(), val) - g.begin());
      }
  }

  bool goes_left(std::size_t row, int var, int cut) const {
    return bins_[row * p_ + static_cast<std::size_t>(var)] <= cut;
  }

  int descend(const Tree& tree, std::size_t row) const {
    int k = 0;
    while (!tree.node(k).is_leaf()) {
      const auto& nd = tree.node(k);
      k = goes_left(row, nd.split_var, nd.cut_index) ? nd.left : nd.right;
    }
    return k;
  }

  // Available cut indices per variable for a node, given its ancestors.
  void cut_ranges(const Tree& tree, int at, std::vector<Range>& ranges) const {
    ranges.resize(p_);
    for (std::size_t v = 0; v < p_; ++v) ranges[v] = {0, static_cast<int>(cuts_[v].size()) - 1};
    int child = at;
    int up = tree.node(at).parent;
    while (up >= 0) {
      const auto& nd = tree.node(up);
      auto& rg = ranges[static_cast<std::size_t>(nd.split_var)];
      if (nd.left == child)
        rg.hi = std::min(rg.hi, nd.cut_index - 1);
      else
        rg.lo = std::max(rg.lo, nd.cut_index + 1);
      child = up;
      up = nd.parent;
    }
  }

  static bool any_range(const std::vector<Range>& ranges) {
    for (const auto& r : ranges)
      if (r.lo <= r.hi) return true;
    return false;
  }

  bool splittable(const Tree& tree, int at) {
    cut_ranges(tree, at, scratch_ranges_);
    return any_range(scratch_ranges_);
  }

  // Whether a child created by splitting `parent_ranges` on (var, cut)
  // could itself be split.
  bool child_splittable(std::vector<Range> ranges, int var, int cut, bool left) const {
    auto& rg = ranges[static_cast<std::size_t>(var)];
    if (left)
      rg.hi = cut - 1;
    else
      rg.lo = cut + 1;
    return any_range(ranges);
  }

  double grow_prob(bool can_split, int depth) const {
    return can_split ? split_probability(depth) : 0.0;
  }

  void accumulate_target(const HeteroTarget& target) {
    const auto m = static_cast<std::size_t>(target.resp.size());
    if (static_cast<std::size_t>(target.w.size()) != m) throw Error("target resp/w length mismatch");
    if (target.rows.empty() && m % n_ != 0)
      throw Error("target length " + std::to_string(m) + " is not a multiple of training n " +
                  std::to_string(n_));
    if (!target.rows.empty() && target.rows.size() != m) throw Error("target rows length mismatch");
    row_prec_.assign(n_, 0.0);
    row_wsum_.assign(n_, 0.0);
    for (std::size_t k = 0; k < m; ++k) {
      const double w = target.w(static_cast<Eigen::Index>(k));
      if (!(w > 0.0) || !std::isfinite(w)) throw Error("target error sds must be positive and finite");
      const std::size_t r = target.rows.empty() ? k % n_ : target.rows[k];
      if (r >= n_) throw Error("target row index out of range");
      const double prec = 1.0 / (w * w);
      row_prec_[r] += prec;
      row_wsum_[r] += prec * target.resp(static_cast<Eigen::Index>(k));
    }
  }

  void update_tree(std::size_t j, Random& rng) {
    Tree& tree = trees_[j];
    std::vector<int>& lof = leaf_of_[j];

    partial_.resize(n_);
    resid_.resize(n_);
    for (std::size_t r = 0; r < n_; ++r) {
      partial_[r] = fits_(static_cast<Eigen::Index>(r)) - tree.node(lof[r]).leaf_value;
      resid_[r] = row_wsum_[r] - row_prec_[r] * partial_[r];
    }
    node_stats(tree, lof);

    if (moves_enabled_) birth_death(tree, lof, rng);

    for (int leaf : tree.leaves()) {
      const auto k = static_cast<std::size_t>(leaf);
      const auto post = leaf_posterior(stat_prec_[k], stat_sum_[k], leaf_sd_);
      tree.node(leaf).leaf_value = rng.normal(post.mean, std::sqrt(post.variance));
    }
    for (std::size_t r = 0; r < n_; ++r)
      fits_(static_cast<Eigen::Index>(r)) = partial_[r] + tree.node(lof[r]).leaf_value;
  }

  void node_stats(const Tree& tree, const std::vector<int>& lof) {
    const std::size_t sz = tree.pool_size() + 2;
    stat_prec_.assign(sz, 0.0);
    stat_sum_.assign(sz, 0.0);
    stat_count_.assign(sz, 0);
    for (std::size_t r = 0; r < n_; ++r) {
      const auto k = static_cast<std::size_t>(lof[r]);
      stat_prec_[k] += row_prec_[r];
      stat_sum_[k] += resid_[r];
      ++stat_count_[k];
    }
  }

  void ensure_stat_size(std::size_t sz) {
    if (stat_prec_.size() < sz) {
      stat_prec_.resize(sz, 0.0);
      stat_sum_.resize(sz, 0.0);
      stat_count_.resize(sz, 0);
    }
  }

  // Grow/prune Metropolis-Hastings step.
  void birth_death(Tree& tree, std::vector<int>& lof, Random& rng) {
    const auto leaves = tree.leaves();
    std::vector<int> goodbots;
    for (int leaf : leaves)
      if (splittable(tree, leaf)) goodbots.push_back(leaf);

    const bool root_only = tree.root_only();
    double prob_birth = 0.0;
    if (root_only)
      prob_birth = goodbots.empty() ? 0.0 : 1.0;
    else
      prob_birth = goodbots.empty() ? 0.0 : 0.5;
    if (root_only && goodbots.empty()) return;

    const double tau = leaf_sd_;
    if (rng.uniform() < prob_birth) {
      const int leaf = goodbots[rng.index(goodbots.size())];
      std::vector<Range> ranges;
      cut_ranges(tree, leaf, ranges);
      std::vector<int> vars;
      for (std::size_t v = 0; v < p_; ++v)
        if (ranges[v].lo <= ranges[v].hi) vars.push_back(static_cast<int>(v));
      const int var = vars[rng.index(vars.size())];
      const auto& rg = ranges[static_cast<std::size_t>(var)];
      const int cut = rg.lo + static_cast<int>(rng.index(static_cast<std::size_t>(rg.hi - rg.lo + 1)));

      double pl = 0.0, sl = 0.0, pr = 0.0, sr = 0.0;
      int nl = 0, nr = 0;
      for (std::size_t r = 0; r < n_; ++r) {
        if (lof[r] != leaf) continue;
        if (goes_left(r, var, cut)) {
          pl += row_prec_[r];
          sl += resid_[r];
          ++nl;
        } else {
          pr += row_prec_[r];
          sr += resid_[r];
          ++nr;
        }
      }
      if (nl == 0 || nr == 0) return;

      const int depth = tree.node(leaf).depth;
      const bool good_l = child_splittable(ranges, var, cut, true);
      const bool good_r = child_splittable(ranges, var, cut, false);
      const double pg_node = grow_prob(true, depth);
      const double pg_l = grow_prob(good_l, depth + 1);
      const double pg_r = grow_prob(good_r, depth + 1);

      std::size_t nogs = tree.nogs().size();
      bool parent_was_nog = false;
      if (const int up = tree.node(leaf).parent; up >= 0) {
        const int sib = tree.node(up).left == leaf ? tree.node(up).right : tree.node(up).left;
        parent_was_nog = tree.node(sib).is_leaf();
      }
      const std::size_t nogs_new = nogs + 1 - (parent_was_nog ? 1 : 0);
      const std::size_t good_new = goodbots.size() - 1 + (good_l ? 1 : 0) + (good_r ? 1 : 0);
      const double prob_birth_new = good_new > 0 ? 0.5 : 0.0;
      const double prob_death_new = 1.0 - prob_birth_new;

      const double log_ratio =
          std::log(pg_node) + std::log1p(-pg_l) + std::log1p(-pg_r) + std::log(prob_death_new) -
          std::log(static_cast<double>(nogs_new)) - std::log1p(-pg_node) - std::log(prob_birth) +
          std::log(static_cast<double>(goodbots.size())) + leaf_log_marginal(pl, sl, tau) +
          leaf_log_marginal(pr, sr, tau) - leaf_log_marginal(pl + pr, sl + sr, tau);

      if (std::log(rng.uniform()) < log_ratio) {
        const int l = tree.grow(leaf, var, cut);
        const int rt = tree.node(leaf).right;
        ensure_stat_size(tree.pool_size());
        const auto li = static_cast<std::size_t>(l), ri = static_cast<std::size_t>(rt);
        stat_prec_[li] = pl;
        stat_sum_[li] = sl;
        stat_count_[li] = nl;
        stat_prec_[ri] = pr;
        stat_sum_[ri] = sr;
        stat_count_[ri] = nr;
        for (std::size_t r = 0; r < n_; ++r)
          if (lof[r] == leaf) lof[r] = goes_left(r, var, cut) ? l : rt;
      }
    } else {
      const auto nog_list = tree.nogs();
      const int at = nog_list[rng.index(nog_list.size())];
      const auto& nd = tree.node(at);
      const int l = nd.left, rt = nd.right;
      const bool good_l = splittable(tree, l);
      const bool good_r = splittable(tree, rt);
      const double pg_node = grow_prob(true, nd.depth);
      const double pg_l = grow_prob(good_l, nd.depth + 1);
      const double pg_r = grow_prob(good_r, nd.depth + 1);

      const std::size_t good_new = goodbots.size() - (good_l ? 1 : 0) - (good_r ? 1 : 0) + 1;
      const double prob_birth_new = (at == 0) ? 1.0 : 0.5;
      const double prob_death = 1.0 - prob_birth;

      const auto li = static_cast<std::size_t>(l), ri = static_cast<std::size_t>(rt);
      const double pl = stat_prec_[li], sl = stat_sum_[li], pr = stat_prec_[ri], sr = stat_sum_[ri];

      const double log_ratio =
          std::log1p(-pg_node) + std::log(prob_birth_new) - std::log(static_cast<double>(good_new)) -
          std::log(pg_node) - std::log1p(-pg_l) - std::log1p(-pg_r) - std::log(prob_death) +
          std::log(static_cast<double>(nog_list.size())) +
          leaf_log_marginal(pl + pr, sl + sr, tau) - leaf_log_marginal(pl, sl, tau) -
          leaf_log_marginal(pr, sr, tau);

      if (std::log(rng.uniform()) < log_ratio) {
        const auto ai = static_cast<std::size_t>(at);
        stat_prec_[ai] = pl + pr;
        stat_sum_[ai] = sl + sr;
        stat_count_[ai] = stat_count_[li] + stat_count_[ri];
        for (std::size_t r = 0; r < n_; ++r)
          if (lof[r] == l || lof[r] == rt) lof[r] = at;
        tree.prune(at);
      }
    }
  }

  std::size_t n_;
  std::size_t p_;
  double base_;
  double power_;
  double leaf_sd_;
  bool moves_enabled_ = true;
  std::vector<Tree> trees_;
  std::vector<std::vector<int>> leaf_of_;
  Eigen::VectorXd fits_;
  std::vector<std::vector<double>> cuts_;
  std::vector<std::uint16_t> bins_;

  // Per-sweep scratch.
  std::vector<double> row_prec_, row_wsum_, partial_, resid_;
  std::vector<double> stat_prec_, stat_sum_;
  std::vector<int> stat_count_;
  std::vector<Range> scratch_ranges_;
};

inline Forest forest_init(const Eigen::MatrixXd& covariates, const FunctionPrior& prior,
                          FunctionRole which) {
  prior.validate();
  const bool is_f = which == FunctionRole::f;
  return Forest(covariates, is_f ? prior.num_trees_f : prior.num_trees_h,
                is_f ? prior.sigma_f : prior.sigma_h, prior.tree_depth_base,
                prior.tree_depth_power, prior.num_cutpoints);
}

inline void forest_sweep(Forest& forest, const HeteroTarget& target, Random& rng) {
  forest.sweep(target, rng);
}

inline Eigen::VectorXd forest_predict(const Forest& forest, const Eigen::MatrixXd& covariates) {
  return forest.predict(covariates);
}

}  // namespace ivbart::bart
