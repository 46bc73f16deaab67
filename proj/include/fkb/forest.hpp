#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

#include <Eigen/Dense>

namespace fkb {

/// Node of an axis-aligned binary tree. A node is internal when `var >= 0`;
/// rows with x[var] < threshold go left, the rest go right.
struct TreeNode {
  int var = -1;
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  int leaf_id = -1;
  double value = 0.0;

  bool is_leaf() const { return var < 0; }
};

/// Flat tree, root at index 0. Leaf ids run 0..L-1 in left-first depth-first order.
class Tree {
 public:
  Tree();  // single leaf, value 0
  explicit Tree(std::vector<TreeNode> nodes);

  const std::vector<TreeNode>& nodes() const { return nodes_; }
  int num_leaves() const { return num_leaves_; }
  int depth() const;

  /// Index of the leaf node reached by `x`.
  int route(const double* x, Eigen::Index stride) const;
  int leaf_id(const Eigen::Ref<const Eigen::RowVectorXd>& x) const;
  double value(const Eigen::Ref<const Eigen::RowVectorXd>& x) const;

 private:
  void renumber();

  std::vector<TreeNode> nodes_;
  int num_leaves_ = 0;
};

enum class EnsembleKind { RF, BART };

struct EnsembleTree {
  int draw = 0;
  int index = 0;
  Tree tree;
};

struct ForestParams {
  int num_trees = 100;
  std::optional<int> mtry;  // default ceil(p / 3)
  int min_leaf = 5;
  std::optional<int> max_depth;
  bool bootstrap = true;
};

struct BartParams {
  int num_trees = 100;
  int burn_in = 250;
  int draws = 50;
  int thin = 2;
  double alpha = 0.95;
  double beta = 2.0;
  double k = 2.0;
  double nu = 3.0;
  double q = 0.90;
  int max_cutpoints = 100;
  double p_grow = 0.4;
  double p_prune = 0.4;  // change gets the remainder
};

/// Trees of a fitted ensemble: RF has one draw of T trees, BART has B
/// retained posterior draws of T trees each, stored draw-major.
struct EnsembleModel {
  EnsembleKind kind = EnsembleKind::RF;
  int draws = 1;
  int trees_per_draw = 0;
  Eigen::Index num_features = 0;
  std::vector<EnsembleTree> trees;
  // Leaf values live on an internal scale: y = offset + scale * value.
  double y_offset = 0.0;
  double y_scale = 1.0;
  std::uint64_t seed = 0;
  std::vector<double> sigma_sq_draws;  // BART only, original outcome scale

  std::size_t size() const { return trees.size(); }
};

EnsembleModel fit_random_forest(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                const ForestParams& params, std::uint64_t seed);

EnsembleModel fit_bart(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const BartParams& params,
                       std::uint64_t seed);

/// Leaf id of every row of X in `tree`.
Eigen::VectorXi leaf_ids(const Tree& tree, const Eigen::MatrixXd& X, Eigen::Index expected_p);

Eigen::VectorXd predict_ensemble(const EnsembleModel& model, const Eigen::MatrixXd& X);

/// One node per line: `node_id kind var threshold left right value`, kind is
/// `I` or `L`. Each tree is preceded by `tree <draw> <index> <node_count>`;
/// the file starts with `ensemble <RF|BART> <draws> <trees_per_draw> <p> <offset> <scale>`.
void write_ensemble(std::ostream& out, const EnsembleModel& model);
EnsembleModel read_ensemble(std::istream& in);

}  // namespace fkb
