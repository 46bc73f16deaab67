#include "fkb/forest.hpp"

#include <algorithm>
#include <istream>
#include <ostream>
#include <sstream>

#include "fkb/csv.hpp"
#include "fkb/error.hpp"

namespace fkb {

Tree::Tree() : nodes_{TreeNode{}} { renumber(); }

Tree::Tree(std::vector<TreeNode> nodes) : nodes_(std::move(nodes)) {
  if (nodes_.empty()) throw InvalidArgument("tree must have at least one node");
  renumber();
}

void Tree::renumber() {
  num_leaves_ = 0;
  std::vector<int> stack{0};
  std::size_t visited = 0;
  while (!stack.empty()) {
    const int id = stack.back();
    stack.pop_back();
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size() || ++visited > nodes_.size())
      throw InvalidArgument("malformed tree: bad child index or cycle");
    auto& node = nodes_[static_cast<std::size_t>(id)];
    if (node.is_leaf()) {
      node.leaf_id = num_leaves_++;
    } else {
      node.leaf_id = -1;
      stack.push_back(node.right);
      stack.push_back(node.left);
    }
  }
}

int Tree::depth() const {
  int best = 0;
  std::vector<std::pair<int, int>> stack{{0, 0}};
  while (!stack.empty()) {
    auto [id, d] = stack.back();
    stack.pop_back();
    const auto& node = nodes_[static_cast<std::size_t>(id)];
    if (node.is_leaf()) {
      best = std::max(best, d);
    } else {
      stack.emplace_back(node.left, d + 1);
      stack.emplace_back(node.right, d + 1);
    }
  }
  return best;
}

int Tree::route(const double* x, Eigen::Index stride) const {
  int id = 0;
  for (;;) {
    const auto& node = nodes_[static_cast<std::size_t>(id)];
    if (node.is_leaf()) return id;
    id = x[node.var * stride] < node.threshold ? node.left : node.right;
  }
}

int Tree::leaf_id(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
  return nodes_[static_cast<std::size_t>(route(x.data(), x.innerStride()))].leaf_id;
}

double Tree::value(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
  return nodes_[static_cast<std::size_t>(route(x.data(), x.innerStride()))].value;
}

Eigen::VectorXi leaf_ids(const Tree& tree, const Eigen::MatrixXd& X, Eigen::Index expected_p) {
  if (X.cols() != expected_p)
    throw DimensionMismatch("leaf_ids: X has " + std::to_string(X.cols()) + " columns, model expects " +
                            std::to_string(expected_p));
  Eigen::VectorXi ids(X.rows());
  const auto& nodes = tree.nodes();
  for (Eigen::Index i = 0; i < X.rows(); ++i)
    ids[i] = nodes[static_cast<std::size_t>(tree.route(&X(i, 0), X.outerStride()))].leaf_id;
  return ids;
}

Eigen::VectorXd predict_ensemble(const EnsembleModel& model, const Eigen::MatrixXd& X) {
  if (X.cols() != model.num_features)
    throw DimensionMismatch("predict_ensemble: X has " + std::to_string(X.cols()) +
                            " columns, model expects " + std::to_string(model.num_features));
  Eigen::VectorXd out = Eigen::VectorXd::Zero(X.rows());
  if (X.rows() == 0 || model.trees.empty()) return out;
  for (const auto& et : model.trees) {
    const auto& nodes = et.tree.nodes();
    for (Eigen::Index i = 0; i < X.rows(); ++i)
      out[i] += nodes[static_cast<std::size_t>(et.tree.route(&X(i, 0), X.outerStride()))].value;
  }
  // RF: mean over trees. BART: mean over draws of the per-draw sum.
  const double denom = model.kind == EnsembleKind::RF ? static_cast<double>(model.trees.size())
                                                      : static_cast<double>(model.draws);
  out /= denom;
  return (model.y_offset + model.y_scale * out.array()).matrix();
}

void write_ensemble(std::ostream& out, const EnsembleModel& model) {
  out << "ensemble " << (model.kind == EnsembleKind::RF ? "RF" : "BART") << ' ' << model.draws << ' '
      << model.trees_per_draw << ' ' << model.num_features << ' ' << csv::format(model.y_offset) << ' '
      << csv::format(model.y_scale) << '\n';
  for (const auto& et : model.trees) {
    const auto& nodes = et.tree.nodes();
    out << "tree " << et.draw << ' ' << et.index << ' ' << nodes.size() << '\n';
    for (std::size_t id = 0; id < nodes.size(); ++id) {
      const auto& n = nodes[id];
      out << id << ' ' << (n.is_leaf() ? 'L' : 'I') << ' ' << n.var << ' ' << csv::format(n.threshold)
          << ' ' << n.left << ' ' << n.right << ' ' << csv::format(n.value) << '\n';
    }
  }
}

EnsembleModel read_ensemble(std::istream& in) {
  auto fail = [](const std::string& what) -> void { throw DataError("ensemble text: " + what); };
  EnsembleModel model;
  std::string tag;
  std::string kind;
  if (!(in >> tag >> kind >> model.draws >> model.trees_per_draw >> model.num_features >>
        model.y_offset >> model.y_scale) ||
      tag != "ensemble")
    fail("bad header");
  if (kind == "RF") {
    model.kind = EnsembleKind::RF;
  } else if (kind == "BART") {
    model.kind = EnsembleKind::BART;
  } else {
    fail("unknown kind '" + kind + "'");
  }
  const auto total = static_cast<std::size_t>(model.draws) * static_cast<std::size_t>(model.trees_per_draw);
  for (std::size_t t = 0; t < total; ++t) {
    EnsembleTree et;
    std::size_t count = 0;
    if (!(in >> tag >> et.draw >> et.index >> count) || tag != "tree") fail("bad tree header");
    std::vector<TreeNode> nodes(count);
    for (std::size_t k = 0; k < count; ++k) {
      std::size_t id = 0;
      char nk = 0;
      TreeNode n;
      if (!(in >> id >> nk >> n.var >> n.threshold >> n.left >> n.right >> n.value) || id != k)
        fail("bad node line");
      if (nk == 'L') {
        n.var = -1;
      } else if (nk != 'I' || n.var < 0 || n.var >= model.num_features) {
        fail("bad node kind or split variable");
      }
      nodes[k] = n;
    }
    et.tree = Tree(std::move(nodes));
    model.trees.push_back(std::move(et));
  }
  return model;
}

}  // namespace fkb
