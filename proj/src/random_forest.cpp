#include <algorithm>
#include <cmath>
#include <numeric>

#include "fkb/error.hpp"
#include "fkb/forest.hpp"
#include "fkb/rng.hpp"

namespace fkb {

namespace {

struct Split {
  int var = -1;
  double threshold = 0.0;
  std::size_t left_count = 0;  // rows in sorted order [0, left_count) go left
  double reduction = 0.0;
};

class TreeBuilder {
 public:
  TreeBuilder(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, int mtry, int min_leaf,
              std::optional<int> max_depth, Rng& rng)
      : X_(X), y_(y), mtry_(mtry), min_leaf_(static_cast<std::size_t>(min_leaf)),
        max_depth_(max_depth), rng_(rng), columns_(static_cast<std::size_t>(X.cols())) {}

  Tree build(std::vector<Eigen::Index> rows) {
    nodes_.clear();
    grow(std::move(rows), 0);
    return Tree(std::move(nodes_));
  }

 private:
  int grow(std::vector<Eigen::Index> rows, int depth) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.emplace_back();

    double mean = 0.0;
    for (auto r : rows) mean += y_[r];
    mean /= static_cast<double>(rows.size());

    Split best;
    const bool may_split = rows.size() >= 2 * min_leaf_ && (!max_depth_ || depth < *max_depth_);
    if (may_split) best = find_split(rows, mean);

    if (best.var < 0) {
      nodes_[static_cast<std::size_t>(id)].value = mean;
      return id;
    }

    std::vector<Eigen::Index> left;
    std::vector<Eigen::Index> right;
    for (auto r : rows) (X_(r, best.var) < best.threshold ? left : right).push_back(r);
    rows.clear();
    rows.shrink_to_fit();

    const int l = grow(std::move(left), depth + 1);
    const int r = grow(std::move(right), depth + 1);
    auto& node = nodes_[static_cast<std::size_t>(id)];
    node.var = best.var;
    node.threshold = best.threshold;
    node.left = l;
    node.right = r;
    return id;
  }

  // Column subsample first, so RNG use never depends on covariate values.
  std::vector<int> sample_columns() {
    std::iota(columns_.begin(), columns_.end(), 0);
    const auto p = columns_.size();
    const auto m = static_cast<std::size_t>(mtry_);
    for (std::size_t k = 0; k < m; ++k) std::swap(columns_[k], columns_[k + rng_.below(p - k)]);
    std::vector<int> chosen(columns_.begin(), columns_.begin() + static_cast<std::ptrdiff_t>(m));
    std::sort(chosen.begin(), chosen.end());
    return chosen;
  }

  Split find_split(const std::vector<Eigen::Index>& rows, double mean) {
    const auto cols = sample_columns();
    const std::size_t m = rows.size();
    std::vector<Eigen::Index> order(rows);
    Split best;
    for (int c : cols) {
      std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
        const double xa = X_(a, c);
        const double xb = X_(b, c);
        return xa < xb || (xa == xb && a < b);
      });
      double total = 0.0;
      for (auto r : order) total += y_[r] - mean;
      double left_sum = 0.0;
      for (std::size_t k = 0; k + 1 < m; ++k) {
        left_sum += y_[order[k]] - mean;
        const double lo = X_(order[k], c);
        const double hi = X_(order[k + 1], c);
        if (!(lo < hi)) continue;
        const std::size_t nl = k + 1;
        const std::size_t nr = m - nl;
        if (nl < min_leaf_ || nr < min_leaf_) continue;
        const double right_sum = total - left_sum;
        const double red = left_sum * left_sum / static_cast<double>(nl) +
                           right_sum * right_sum / static_cast<double>(nr) -
                           total * total / static_cast<double>(m);
        // Strict improvement keeps the lowest column, then the smallest threshold.
        if (red > best.reduction) {
          double t = lo + 0.5 * (hi - lo);
          if (!(lo < t)) t = hi;
          best = Split{c, t, nl, red};
        }
      }
    }
    return best;
  }

  const Eigen::MatrixXd& X_;
  const Eigen::VectorXd& y_;
  int mtry_;
  std::size_t min_leaf_;
  std::optional<int> max_depth_;
  Rng& rng_;
  std::vector<int> columns_;
  std::vector<TreeNode> nodes_;
};

}  // namespace

EnsembleModel fit_random_forest(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                const ForestParams& params, std::uint64_t seed) {
  const Eigen::Index n = X.rows();
  const Eigen::Index p = X.cols();
  if (n < 2) throw InvalidArgument("random forest needs at least 2 rows");
  if (y.size() != n) throw DimensionMismatch("random forest: y length differs from X rows");
  if (p < 1) throw InvalidArgument("random forest needs at least one covariate");
  if (params.num_trees < 1) throw InvalidArgument("random forest: num_trees must be positive");
  if (params.min_leaf < 1) throw InvalidArgument("random forest: min_leaf must be at least 1");
  if (n < 2 * params.min_leaf) throw InvalidArgument("random forest: n must be at least 2 * min_leaf");
  if (!X.allFinite() || !y.allFinite()) throw InvalidArgument("random forest: non-finite input");
  const int mtry = params.mtry.value_or(static_cast<int>((p + 2) / 3));
  if (mtry < 1 || mtry > p) throw InvalidArgument("random forest: mtry must lie in [1, p]");

  EnsembleModel model;
  model.kind = EnsembleKind::RF;
  model.draws = 1;
  model.trees_per_draw = params.num_trees;
  model.num_features = p;
  model.seed = seed;
  model.trees.reserve(static_cast<std::size_t>(params.num_trees));

  for (int t = 0; t < params.num_trees; ++t) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(t)));
    std::vector<Eigen::Index> rows(static_cast<std::size_t>(n));
    if (params.bootstrap) {
      for (auto& r : rows) r = static_cast<Eigen::Index>(rng.below(static_cast<std::size_t>(n)));
    } else {
      std::iota(rows.begin(), rows.end(), Eigen::Index{0});
    }
    TreeBuilder builder(X, y, mtry, params.min_leaf, params.max_depth, rng);
    model.trees.push_back(EnsembleTree{0, t, builder.build(std::move(rows))});
  }
  return model;
}

}  // namespace fkb
