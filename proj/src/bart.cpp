#include <algorithm>
#include <cmath>

#include <boost/math/distributions/chi_squared.hpp>

#include "fkb/error.hpp"
#include "fkb/forest.hpp"
#include "fkb/rng.hpp"

namespace fkb {

namespace {

// Split candidates for one covariate, plus each row's rank against them:
// row i goes left of cut c iff rank(i) <= c.
struct CutGrid {
  std::vector<std::vector<double>> cuts;  // per variable, ascending
  Eigen::MatrixXi rank;                   // n x p
};

CutGrid make_cut_grid(const Eigen::MatrixXd& X, int max_cuts) {
  CutGrid grid;
  const Eigen::Index n = X.rows();
  const Eigen::Index p = X.cols();
  grid.cuts.resize(static_cast<std::size_t>(p));
  grid.rank.resize(n, p);
  for (Eigen::Index v = 0; v < p; ++v) {
    std::vector<double> vals(X.col(v).data(), X.col(v).data() + n);
    std::sort(vals.begin(), vals.end());
    vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
    auto& cuts = grid.cuts[static_cast<std::size_t>(v)];
    const std::size_t gaps = vals.size() > 0 ? vals.size() - 1 : 0;
    auto midpoint = [&](std::size_t k) {
      const double t = vals[k] + 0.5 * (vals[k + 1] - vals[k]);
      return vals[k] < t ? t : vals[k + 1];
    };
    if (gaps <= static_cast<std::size_t>(max_cuts)) {
      for (std::size_t k = 0; k < gaps; ++k) cuts.push_back(midpoint(k));
    } else {
      // Evenly spaced (by rank) subset of the gaps.
      for (int c = 1; c <= max_cuts; ++c) {
        const auto k = static_cast<std::size_t>(static_cast<double>(c) * static_cast<double>(gaps) /
                                                (max_cuts + 1));
        if (cuts.empty() || midpoint(k) > cuts.back()) cuts.push_back(midpoint(k));
      }
    }
    for (Eigen::Index i = 0; i < n; ++i)
      grid.rank(i, v) = static_cast<int>(std::upper_bound(cuts.begin(), cuts.end(), X(i, v)) - cuts.begin());
  }
  return grid;
}

struct Node {
  int parent = -1;
  int left = -1;
  int right = -1;
  int var = -1;
  int cut = -1;
  double mu = 0.0;
  int depth = 0;
  bool alive = true;

  bool is_leaf() const { return left < 0; }
};

struct Stats {
  double count = 0.0;
  double sum = 0.0;
};

class McmcTree {
 public:
  explicit McmcTree(Eigen::Index n) : nodes_{Node{}}, obs_node_(static_cast<std::size_t>(n), 0) {}

  std::vector<Node>& nodes() { return nodes_; }
  const std::vector<Node>& nodes() const { return nodes_; }
  std::vector<int>& obs_node() { return obs_node_; }

  std::vector<int> leaves() const {
    std::vector<int> out;
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      if (nodes_[i].alive && nodes_[i].is_leaf()) out.push_back(static_cast<int>(i));
    return out;
  }

  // Internal nodes whose children are both leaves.
  std::vector<int> nogs() const {
    std::vector<int> out;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const auto& nd = nodes_[i];
      if (nd.alive && !nd.is_leaf() && node(nd.left).is_leaf() && node(nd.right).is_leaf())
        out.push_back(static_cast<int>(i));
    }
    return out;
  }

  bool root_only() const { return nodes_[0].is_leaf(); }
  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }

  int add_node(Node nd) {
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (!nodes_[i].alive) {
        nodes_[i] = nd;
        return static_cast<int>(i);
      }
    }
    nodes_.push_back(nd);
    return static_cast<int>(nodes_.size() - 1);
  }

  // Admissible cut index range [lo, hi) for `var` at node `id`.
  std::pair<int, int> cut_range(int id, int var, int num_cuts) const {
    int lo = 0;
    int hi = num_cuts;
    int child = id;
    int parent = node(id).parent;
    while (parent >= 0) {
      const auto& pn = node(parent);
      if (pn.var == var) {
        if (pn.left == child) {
          hi = std::min(hi, pn.cut);
        } else {
          lo = std::max(lo, pn.cut + 1);
        }
      }
      child = parent;
      parent = pn.parent;
    }
    return {lo, hi};
  }

  Tree export_tree(const CutGrid& grid) const {
    std::vector<TreeNode> out;
    std::vector<std::pair<int, int>> stack;  // (mcmc id, output id)
    out.emplace_back();
    stack.emplace_back(0, 0);
    while (!stack.empty()) {
      auto [src, dst] = stack.back();
      stack.pop_back();
      const auto& nd = node(src);
      if (nd.is_leaf()) {
        out[static_cast<std::size_t>(dst)].value = nd.mu;
        continue;
      }
      const int l = static_cast<int>(out.size());
      out.emplace_back();
      const int r = static_cast<int>(out.size());
      out.emplace_back();
      auto& o = out[static_cast<std::size_t>(dst)];
      o.var = nd.var;
      o.threshold = grid.cuts[static_cast<std::size_t>(nd.var)][static_cast<std::size_t>(nd.cut)];
      o.left = l;
      o.right = r;
      stack.emplace_back(nd.right, r);
      stack.emplace_back(nd.left, l);
    }
    return Tree(std::move(out));
  }

 private:
  std::vector<Node> nodes_;
  std::vector<int> obs_node_;
};

class Sampler {
 public:
  Sampler(const Eigen::MatrixXd& X, const Eigen::VectorXd& y_internal, const BartParams& params,
          double sigma_sq_hat, Rng& rng)
      : X_(X), y_(y_internal), params_(params), rng_(rng),
        grid_(make_cut_grid(X, params.max_cutpoints)), n_(X.rows()), p_(X.cols()) {
    tau_sq_ = std::pow(0.5 / (params.k * std::sqrt(static_cast<double>(params.num_trees))), 2);
    boost::math::chi_squared chi(params.nu);
    lambda_ = sigma_sq_hat * boost::math::quantile(chi, 1.0 - params.q) / params.nu;
    sigma_sq_ = sigma_sq_hat;
    trees_.reserve(static_cast<std::size_t>(params.num_trees));
    for (int t = 0; t < params.num_trees; ++t) trees_.emplace_back(n_);
    fit_ = Eigen::VectorXd::Zero(n_);
    resid_.resize(n_);
  }

  void iterate() {
    for (auto& tree : trees_) {
      for (Eigen::Index i = 0; i < n_; ++i)
        resid_[i] = y_[i] - fit_[i] + tree.node(tree.obs_node()[static_cast<std::size_t>(i)]).mu;
      propose(tree);
      draw_leaves(tree);
      for (Eigen::Index i = 0; i < n_; ++i)
        fit_[i] = y_[i] - resid_[i] + tree.node(tree.obs_node()[static_cast<std::size_t>(i)]).mu;
    }
    draw_sigma();
  }

  double sigma_sq() const { return sigma_sq_; }

  std::vector<Tree> snapshot() const {
    std::vector<Tree> out;
    out.reserve(trees_.size());
    for (const auto& t : trees_) out.push_back(t.export_tree(grid_));
    return out;
  }

 private:
  double log_split_prob(int depth) const {
    return std::log(params_.alpha) - params_.beta * std::log1p(static_cast<double>(depth));
  }
  double log_stop_prob(int depth) const {
    return std::log1p(-params_.alpha * std::pow(1.0 + depth, -params_.beta));
  }

  // Log marginal likelihood of a leaf's residuals, up to terms that cancel.
  double leaf_loglik(const Stats& s) const {
    const double denom = sigma_sq_ + s.count * tau_sq_;
    return 0.5 * std::log(sigma_sq_ / denom) + tau_sq_ * s.sum * s.sum / (2.0 * sigma_sq_ * denom);
  }

  Stats stats_of(McmcTree& tree, int id) const {
    Stats s;
    const auto& on = tree.obs_node();
    for (Eigen::Index i = 0; i < n_; ++i) {
      if (on[static_cast<std::size_t>(i)] != id) continue;
      s.count += 1.0;
      s.sum += resid_[i];
    }
    return s;
  }

  std::pair<Stats, Stats> split_stats(McmcTree& tree, int id, int var, int cut) const {
    Stats l;
    Stats r;
    const auto& on = tree.obs_node();
    for (Eigen::Index i = 0; i < n_; ++i) {
      if (on[static_cast<std::size_t>(i)] != id) continue;
      Stats& s = grid_.rank(i, var) <= cut ? l : r;
      s.count += 1.0;
      s.sum += resid_[i];
    }
    return {l, r};
  }

  // Uniform variable among those with a non-empty cut range, then uniform cut.
  bool draw_rule(const McmcTree& tree, int id, int& var, int& cut) {
    std::vector<std::pair<int, std::pair<int, int>>> avail;
    for (int v = 0; v < p_; ++v) {
      const auto range = tree.cut_range(id, v, static_cast<int>(grid_.cuts[static_cast<std::size_t>(v)].size()));
      if (range.second > range.first) avail.emplace_back(v, range);
    }
    if (avail.empty()) return false;
    const auto& pick = avail[rng_.below(avail.size())];
    var = pick.first;
    cut = pick.second.first + static_cast<int>(rng_.below(static_cast<std::size_t>(pick.second.second - pick.second.first)));
    return true;
  }

  bool accept(double log_ratio) { return std::log(1.0 - rng_.uniform()) < log_ratio; }

  void propose(McmcTree& tree) {
    const double u = rng_.uniform();
    if (tree.root_only() || u < params_.p_grow) {
      grow(tree);
    } else if (u < params_.p_grow + params_.p_prune) {
      prune(tree);
    } else {
      change(tree);
    }
  }

  void grow(McmcTree& tree) {
    const auto leaves = tree.leaves();
    const int leaf = leaves[rng_.below(leaves.size())];
    int var = -1;
    int cut = -1;
    if (!draw_rule(tree, leaf, var, cut)) return;
    const auto [ls, rs] = split_stats(tree, leaf, var, cut);
    if (ls.count < 1.0 || rs.count < 1.0) return;
    Stats parent{ls.count + rs.count, ls.sum + rs.sum};

    const int d = tree.node(leaf).depth;
    const double p_grow_here = tree.root_only() ? 1.0 : params_.p_grow;
    auto nogs = tree.nogs();
    int nogs_after = static_cast<int>(nogs.size()) + 1;
    const int par = tree.node(leaf).parent;
    if (par >= 0 && std::find(nogs.begin(), nogs.end(), par) != nogs.end()) --nogs_after;

    const double log_trans = std::log(params_.p_prune) - std::log(p_grow_here) +
                             std::log(static_cast<double>(leaves.size())) - std::log(static_cast<double>(nogs_after));
    const double log_prior = log_split_prob(d) + 2.0 * log_stop_prob(d + 1) - log_stop_prob(d);
    const double log_lik = leaf_loglik(ls) + leaf_loglik(rs) - leaf_loglik(parent);
    if (!accept(log_trans + log_prior + log_lik)) return;

    Node child;
    child.parent = leaf;
    child.depth = d + 1;
    const int l = tree.add_node(child);
    const int r = tree.add_node(child);
    auto& nd = tree.node(leaf);
    nd.left = l;
    nd.right = r;
    nd.var = var;
    nd.cut = cut;
    auto& on = tree.obs_node();
    for (Eigen::Index i = 0; i < n_; ++i) {
      auto& slot = on[static_cast<std::size_t>(i)];
      if (slot == leaf) slot = grid_.rank(i, var) <= cut ? l : r;
    }
  }

  void prune(McmcTree& tree) {
    const auto nogs = tree.nogs();
    const int target = nogs[rng_.below(nogs.size())];
    const auto& nd = tree.node(target);
    const Stats ls = stats_of(tree, nd.left);
    const Stats rs = stats_of(tree, nd.right);
    Stats parent{ls.count + rs.count, ls.sum + rs.sum};

    const int d = nd.depth;
    const std::size_t leaves_after = tree.leaves().size() - 1;
    const double p_grow_after = target == 0 ? 1.0 : params_.p_grow;
    const double log_trans = std::log(p_grow_after) - std::log(params_.p_prune) +
                             std::log(static_cast<double>(nogs.size())) -
                             std::log(static_cast<double>(leaves_after));
    const double log_prior = -(log_split_prob(d) + 2.0 * log_stop_prob(d + 1) - log_stop_prob(d));
    const double log_lik = leaf_loglik(parent) - leaf_loglik(ls) - leaf_loglik(rs);
    if (!accept(log_trans + log_prior + log_lik)) return;

    const int l = nd.left;
    const int r = nd.right;
    tree.node(l).alive = false;
    tree.node(r).alive = false;
    auto& t = tree.node(target);
    t.left = t.right = -1;
    t.var = t.cut = -1;
    for (auto& slot : tree.obs_node())
      if (slot == l || slot == r) slot = target;
  }

  void change(McmcTree& tree) {
    const auto nogs = tree.nogs();
    const int target = nogs[rng_.below(nogs.size())];
    int var = -1;
    int cut = -1;
    if (!draw_rule(tree, target, var, cut)) return;
    const auto& nd = tree.node(target);
    const Stats old_l = stats_of(tree, nd.left);
    const Stats old_r = stats_of(tree, nd.right);
    // Rows currently sit in the two children, not in `target`.
    Stats nl;
    Stats nr;
    const auto& on = tree.obs_node();
    for (Eigen::Index i = 0; i < n_; ++i) {
      const int slot = on[static_cast<std::size_t>(i)];
      if (slot != nd.left && slot != nd.right) continue;
      Stats& s = grid_.rank(i, var) <= cut ? nl : nr;
      s.count += 1.0;
      s.sum += resid_[i];
    }
    if (nl.count < 1.0 || nr.count < 1.0) return;
    const double log_ratio = leaf_loglik(nl) + leaf_loglik(nr) - leaf_loglik(old_l) - leaf_loglik(old_r);
    if (!accept(log_ratio)) return;

    auto& t = tree.node(target);
    t.var = var;
    t.cut = cut;
    const int l = t.left;
    const int r = t.right;
    auto& slots = tree.obs_node();
    for (Eigen::Index i = 0; i < n_; ++i) {
      auto& slot = slots[static_cast<std::size_t>(i)];
      if (slot == l || slot == r) slot = grid_.rank(i, var) <= cut ? l : r;
    }
  }

  void draw_leaves(McmcTree& tree) {
    auto& nodes = tree.nodes();
    std::vector<Stats> stats(nodes.size());
    const auto& on = tree.obs_node();
    for (Eigen::Index i = 0; i < n_; ++i) {
      auto& s = stats[static_cast<std::size_t>(on[static_cast<std::size_t>(i)])];
      s.count += 1.0;
      s.sum += resid_[i];
    }
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      auto& nd = nodes[k];
      if (!nd.alive || !nd.is_leaf()) continue;
      const double prec = stats[k].count / sigma_sq_ + 1.0 / tau_sq_;
      const double mean = stats[k].sum / sigma_sq_ / prec;
      nd.mu = mean + rng_.normal() / std::sqrt(prec);
    }
  }

  void draw_sigma() {
    const double sse = (y_ - fit_).squaredNorm();
    const double shape_dof = params_.nu + static_cast<double>(n_);
    sigma_sq_ = (params_.nu * lambda_ + sse) / rng_.chi_squared(shape_dof);
  }

  const Eigen::MatrixXd& X_;
  const Eigen::VectorXd& y_;
  BartParams params_;
  Rng& rng_;
  CutGrid grid_;
  Eigen::Index n_;
  Eigen::Index p_;
  double tau_sq_ = 0.0;
  double lambda_ = 0.0;
  double sigma_sq_ = 1.0;
  std::vector<McmcTree> trees_;
  Eigen::VectorXd fit_;
  Eigen::VectorXd resid_;
};

void validate(const BartParams& p) {
  if (p.num_trees < 1 || p.burn_in < 0 || p.draws < 1 || p.thin < 1)
    throw InvalidArgument("bart: num_trees, draws and thin must be positive, burn_in non-negative");
  if (!(p.alpha > 0.0 && p.alpha < 1.0)) throw InvalidArgument("bart: alpha must lie in (0, 1)");
  if (!(p.beta > 0.0 && p.k > 0.0 && p.nu > 0.0)) throw InvalidArgument("bart: beta, k, nu must be positive");
  if (!(p.q > 0.0 && p.q < 1.0)) throw InvalidArgument("bart: q must lie in (0, 1)");
  if (p.max_cutpoints < 1) throw InvalidArgument("bart: max_cutpoints must be positive");
  if (!(p.p_grow > 0.0 && p.p_prune > 0.0 && p.p_grow + p.p_prune <= 1.0))
    throw InvalidArgument("bart: move probabilities must be positive and sum to at most 1");
}

double residual_variance_estimate(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
  const Eigen::Index n = X.rows();
  const Eigen::Index p = X.cols();
  if (n > p + 1) {
    Eigen::MatrixXd D(n, p + 1);
    D.col(0).setOnes();
    D.rightCols(p) = X;
    const Eigen::VectorXd beta = D.colPivHouseholderQr().solve(y);
    const double rss = (y - D * beta).squaredNorm();
    if (rss > 0.0) return rss / static_cast<double>(n - p - 1);
  }
  const double mean = y.mean();
  const double var = (y.array() - mean).square().sum() / static_cast<double>(n - 1);
  return var > 0.0 ? var : 1e-4;
}

}  // namespace

EnsembleModel fit_bart(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const BartParams& params,
                       std::uint64_t seed) {
  validate(params);
  if (X.rows() < 10) throw InvalidArgument("bart needs at least 10 rows");
  if (y.size() != X.rows()) throw DimensionMismatch("bart: y length differs from X rows");
  if (!y.allFinite()) throw InvalidArgument("bart: non-finite outcome");
  if (!X.allFinite()) throw InvalidArgument("bart: non-finite covariates");

  const double lo = y.minCoeff();
  const double hi = y.maxCoeff();
  const double offset = 0.5 * (lo + hi);
  const double scale = hi > lo ? hi - lo : 1.0;
  const Eigen::VectorXd y_internal = ((y.array() - offset) / scale).matrix();

  Rng rng(seed);
  Sampler sampler(X, y_internal, params, residual_variance_estimate(X, y_internal), rng);

  EnsembleModel model;
  model.kind = EnsembleKind::BART;
  model.draws = params.draws;
  model.trees_per_draw = params.num_trees;
  model.num_features = X.cols();
  model.y_offset = offset;
  model.y_scale = scale;
  model.seed = seed;
  model.trees.reserve(static_cast<std::size_t>(params.draws) * static_cast<std::size_t>(params.num_trees));

  for (int it = 0; it < params.burn_in; ++it) sampler.iterate();
  for (int b = 0; b < params.draws; ++b) {
    for (int k = 0; k < params.thin; ++k) sampler.iterate();
    auto trees = sampler.snapshot();
    for (int t = 0; t < params.num_trees; ++t)
      model.trees.push_back(EnsembleTree{b, t, std::move(trees[static_cast<std::size_t>(t)])});
    model.sigma_sq_draws.push_back(sampler.sigma_sq() * scale * scale);
  }
  return model;
}

}  // namespace fkb
