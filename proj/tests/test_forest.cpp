#include <doctest.h>

#include <set>
#include <sstream>

#include "fkb/error.hpp"
#include "fkb/forest.hpp"
#include "support.hpp"

using namespace fkb;
using fkb::testing::normal_matrix;
using fkb::testing::normal_vector;

namespace {

Tree stump(int var, double threshold, double left_value, double right_value) {
  std::vector<TreeNode> nodes(3);
  nodes[0].var = var;
  nodes[0].threshold = threshold;
  nodes[0].left = 1;
  nodes[0].right = 2;
  nodes[1].value = left_value;
  nodes[2].value = right_value;
  return Tree(nodes);
}

ForestParams exact_params() {
  ForestParams p;
  p.num_trees = 3;
  p.min_leaf = 1;
  p.bootstrap = false;
  return p;
}

}  // namespace

TEST_CASE("constant outcome gives single-leaf trees") {
  Rng rng(1);
  const Eigen::MatrixXd X = normal_matrix(rng, 60, 4);
  const Eigen::VectorXd y = Eigen::VectorXd::Constant(60, 7.0);
  const auto model = fit_random_forest(X, y, ForestParams{}, 5);
  REQUIRE(model.trees.size() == 100);
  for (const auto& et : model.trees) {
    CHECK(et.tree.nodes().size() == 1);
    CHECK(et.tree.num_leaves() == 1);
  }
  const Eigen::VectorXd pred = predict_ensemble(model, normal_matrix(rng, 10, 4));
  for (Eigen::Index i = 0; i < pred.size(); ++i) CHECK(pred[i] == doctest::Approx(7.0).epsilon(1e-15));
}

TEST_CASE("two points split at the midpoint") {
  Eigen::MatrixXd X(2, 1);
  X << 0.0, 1.0;
  Eigen::VectorXd y(2);
  y << 0.0, 10.0;
  ForestParams p;
  p.num_trees = 1;
  p.min_leaf = 1;
  p.bootstrap = false;
  p.mtry = 1;
  const auto model = fit_random_forest(X, y, p, 0);
  REQUIRE(model.trees.size() == 1);
  const auto& tree = model.trees[0].tree;
  REQUIRE(tree.nodes().size() == 3);
  CHECK(tree.nodes()[0].var == 0);
  CHECK(tree.nodes()[0].threshold == 0.5);
  const auto ids = leaf_ids(tree, X, 1);
  CHECK(ids[0] != ids[1]);
  CHECK(ids[0] == 0);
  CHECK(ids[1] == 1);
}

TEST_CASE("ensemble shape follows num_trees") {
  Rng rng(2);
  const Eigen::MatrixXd X = normal_matrix(rng, 80, 3);
  const Eigen::VectorXd y = normal_vector(rng, 80);
  const auto model = fit_random_forest(X, y, ForestParams{}, 3);
  CHECK(model.trees.size() == 100);
  CHECK(model.kind == EnsembleKind::RF);
  CHECK(model.num_features == 3);
  for (std::size_t t = 0; t < model.trees.size(); ++t) CHECK(model.trees[t].index == static_cast<int>(t));
}

TEST_CASE("leaf ids of fixed trees") {
  SUBCASE("single leaf") {
    const Tree leaf;
    Rng rng(3);
    const auto ids = leaf_ids(leaf, normal_matrix(rng, 7, 2), 2);
    CHECK(ids == Eigen::VectorXi::Zero(7));
  }
  SUBCASE("stump on the first column") {
    Eigen::MatrixXd X(2, 2);
    X << 0.2, 5.0, 0.8, -5.0;
    const auto ids = leaf_ids(stump(0, 0.5, 0, 0), X, 2);
    CHECK(ids[0] == 0);
    CHECK(ids[1] == 1);
  }
  SUBCASE("column count is checked") {
    CHECK_THROWS_AS(leaf_ids(Tree{}, Eigen::MatrixXd::Zero(2, 3), 2), DimensionMismatch);
  }
}

TEST_CASE("leaf ids stay below the leaf count and every row reaches one leaf") {
  Rng rng(4);
  for (int rep = 0; rep < 10; ++rep) {
    const Eigen::MatrixXd X = normal_matrix(rng, 100, 4);
    const Eigen::VectorXd y = X.col(0).array().square() + normal_vector(rng, 100).array();
    ForestParams p;
    p.num_trees = 5;
    const auto model = fit_random_forest(X, y, p, static_cast<std::uint64_t>(rep));
    const Eigen::MatrixXd probe = normal_matrix(rng, 50, 4);
    for (const auto& et : model.trees) {
      const auto ids = leaf_ids(et.tree, probe, 4);
      CHECK(ids.minCoeff() >= 0);
      CHECK(ids.maxCoeff() < et.tree.num_leaves());
      // Leaf ids are a dense 0..L-1 numbering.
      std::set<int> seen;
      for (const auto& node : et.tree.nodes())
        if (node.is_leaf()) seen.insert(node.leaf_id);
      CHECK(static_cast<int>(seen.size()) == et.tree.num_leaves());
      CHECK(*seen.rbegin() == et.tree.num_leaves() - 1);
    }
  }
}

TEST_CASE("predictions") {
  SUBCASE("hand-built single leaves") {
    EnsembleModel m;
    m.kind = EnsembleKind::RF;
    m.num_features = 2;
    m.trees_per_draw = 4;
    std::vector<TreeNode> leaf(1);
    leaf[0].value = 7.0;
    for (int t = 0; t < 4; ++t) m.trees.push_back({0, t, Tree(leaf)});
    const auto pred = predict_ensemble(m, Eigen::MatrixXd::Random(5, 2));
    for (Eigen::Index i = 0; i < 5; ++i) CHECK(pred[i] == 7.0);
  }
  SUBCASE("deep trees without bootstrap interpolate the training data") {
    Rng rng(5);
    const Eigen::MatrixXd X = normal_matrix(rng, 120, 3);
    const Eigen::VectorXd y = normal_vector(rng, 120);
    const auto model = fit_random_forest(X, y, exact_params(), 9);
    const auto pred = predict_ensemble(model, X);
    CHECK((pred - y).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("empty input") {
    Rng rng(6);
    const Eigen::MatrixXd X = normal_matrix(rng, 20, 2);
    const auto model = fit_random_forest(X, normal_vector(rng, 20), exact_params(), 1);
    CHECK(predict_ensemble(model, Eigen::MatrixXd(0, 2)).size() == 0);
  }
}

TEST_CASE("fixed seed reproduces the forest and different seeds do not") {
  Rng rng(7);
  const Eigen::MatrixXd X = normal_matrix(rng, 150, 5);
  const Eigen::VectorXd y = X.col(1) + normal_vector(rng, 150);
  ForestParams p;
  p.num_trees = 20;
  std::ostringstream a, b, c;
  write_ensemble(a, fit_random_forest(X, y, p, 42));
  write_ensemble(b, fit_random_forest(X, y, p, 42));
  write_ensemble(c, fit_random_forest(X, y, p, 43));
  CHECK(a.str() == b.str());
  CHECK(a.str() != c.str());
}

TEST_CASE("text serialization round trip") {
  Rng rng(8);
  const Eigen::MatrixXd X = normal_matrix(rng, 90, 3);
  const Eigen::VectorXd y = X.col(0).array().sin().matrix() + 0.1 * normal_vector(rng, 90);
  ForestParams p;
  p.num_trees = 6;
  const auto model = fit_random_forest(X, y, p, 10);
  std::stringstream ss;
  write_ensemble(ss, model);
  const auto back = read_ensemble(ss);
  CHECK(back.trees.size() == model.trees.size());
  CHECK(back.num_features == model.num_features);
  const Eigen::MatrixXd probe = normal_matrix(rng, 40, 3);
  CHECK(predict_ensemble(back, probe) == predict_ensemble(model, probe));
  for (std::size_t t = 0; t < model.trees.size(); ++t)
    CHECK(leaf_ids(back.trees[t].tree, probe, 3) == leaf_ids(model.trees[t].tree, probe, 3));

  std::istringstream junk("ensemble RF 1 1 2 0 1\ntree 0 0 1\n0 Q -1 0 -1 -1 0\n");
  CHECK_THROWS_AS(read_ensemble(junk), DataError);
}

TEST_CASE("leaf memberships are invariant under per-column exp") {
  for (std::uint64_t rep = 0; rep < 10; ++rep) {
    Rng rng(100 + rep);
    const Eigen::MatrixXd X = normal_matrix(rng, 200, 5);
    const Eigen::VectorXd y = X.col(0).array().square().matrix() + X.col(2) + normal_vector(rng, 200);
    const Eigen::MatrixXd Xt = X.array().exp().matrix();
    ForestParams p;
    p.num_trees = 25;
    p.bootstrap = false;
    const auto a = fit_random_forest(X, y, p, rep);
    const auto b = fit_random_forest(Xt, y, p, rep);
    REQUIRE(a.trees.size() == b.trees.size());
    bool identical = true;
    for (std::size_t t = 0; t < a.trees.size(); ++t)
      identical = identical && leaf_ids(a.trees[t].tree, X, 5) == leaf_ids(b.trees[t].tree, Xt, 5);
    CHECK(identical);
  }
}

// Out-of-bag rows can sit inside a split gap, so only the tree shapes are compared here.
TEST_CASE("bootstrapped trees have the same shape under per-column exp") {
  for (std::uint64_t rep = 0; rep < 5; ++rep) {
    Rng rng(500 + rep);
    const Eigen::MatrixXd X = normal_matrix(rng, 200, 5);
    const Eigen::VectorXd y = X.col(1) + normal_vector(rng, 200);
    ForestParams p;
    p.num_trees = 25;
    const auto a = fit_random_forest(X, y, p, rep);
    const auto b = fit_random_forest(X.array().exp().matrix(), y, p, rep);
    bool same = a.trees.size() == b.trees.size();
    for (std::size_t t = 0; same && t < a.trees.size(); ++t) {
      const auto& na = a.trees[t].tree.nodes();
      const auto& nb = b.trees[t].tree.nodes();
      same = na.size() == nb.size();
      for (std::size_t k = 0; same && k < na.size(); ++k)
        same = na[k].var == nb[k].var && na[k].left == nb[k].left && na[k].value == nb[k].value;
    }
    CHECK(same);
  }
}

TEST_CASE("forest input validation") {
  Rng rng(9);
  const Eigen::MatrixXd X = normal_matrix(rng, 20, 2);
  const Eigen::VectorXd y = normal_vector(rng, 20);
  ForestParams p;
  CHECK_THROWS_AS(fit_random_forest(X, normal_vector(rng, 19), p, 0), DimensionMismatch);
  p.mtry = 3;
  CHECK_THROWS_AS(fit_random_forest(X, y, p, 0), InvalidArgument);
  p.mtry.reset();
  p.num_trees = 0;
  CHECK_THROWS_AS(fit_random_forest(X, y, p, 0), InvalidArgument);
  Eigen::MatrixXd bad = X;
  bad(3, 1) = std::nan("");
  CHECK_THROWS_AS(fit_random_forest(bad, y, ForestParams{}, 0), InvalidArgument);
}
