#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "fkb/error.hpp"
#include "fkb/kernel.hpp"

namespace fkb {

namespace {

void check_rows(Eigen::Index n) {
  if (n > kMaxKernelRows)
    throw InvalidArgument("kernel matrices are dense; n = " + std::to_string(n) + " exceeds the limit of " +
                          std::to_string(kMaxKernelRows));
}

// Row i of `ids` holds unit i's leaf id in every tree, contiguous.
template <typename Id>
Eigen::MatrixXd co_leaf_fraction(const std::vector<Id>& ids, Eigen::Index n, std::size_t trees) {
  Eigen::MatrixXd K(n, n);
  const double inv = 1.0 / static_cast<double>(trees);
  for (Eigen::Index i = 0; i < n; ++i) {
    K(i, i) = 1.0;
    const Id* a = ids.data() + static_cast<std::size_t>(i) * trees;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const Id* b = ids.data() + static_cast<std::size_t>(j) * trees;
      std::uint32_t same = 0;
      for (std::size_t t = 0; t < trees; ++t) same += static_cast<std::uint32_t>(a[t] == b[t]);
      const double v = same == trees ? 1.0 : static_cast<double>(same) * inv;
      K(i, j) = v;
      K(j, i) = v;
    }
  }
  return K;
}

template <typename Id>
std::vector<Id> leaf_id_rows(const EnsembleModel& model, const Eigen::MatrixXd& X) {
  const std::size_t trees = model.trees.size();
  const auto n = static_cast<std::size_t>(X.rows());
  std::vector<Id> ids(n * trees);
  for (std::size_t t = 0; t < trees; ++t) {
    const auto col = leaf_ids(model.trees[t].tree, X, model.num_features);
    for (std::size_t i = 0; i < n; ++i) ids[i * trees + t] = static_cast<Id>(col[static_cast<Eigen::Index>(i)]);
  }
  return ids;
}

}  // namespace

KernelMatrix forest_kernel(const EnsembleModel& model, const Eigen::MatrixXd& X) {
  if (X.cols() != model.num_features)
    throw DimensionMismatch("forest_kernel: X has " + std::to_string(X.cols()) + " columns, model expects " +
                            std::to_string(model.num_features));
  if (model.trees.empty()) throw InvalidArgument("forest_kernel: ensemble has no trees");
  check_rows(X.rows());
  int max_leaves = 0;
  for (const auto& et : model.trees) max_leaves = std::max(max_leaves, et.tree.num_leaves());
  KernelMatrix out;
  out.kind = KernelKind::Forest;
  if (max_leaves <= 0xFFFF) {
    out.K = co_leaf_fraction(leaf_id_rows<std::uint16_t>(model, X), X.rows(), model.trees.size());
  } else {
    out.K = co_leaf_fraction(leaf_id_rows<std::uint32_t>(model, X), X.rows(), model.trees.size());
  }
  return out;
}

Eigen::VectorXd column_variances(const Eigen::MatrixXd& M) {
  const double n = static_cast<double>(M.rows());
  Eigen::VectorXd v(M.cols());
  for (Eigen::Index j = 0; j < M.cols(); ++j) {
    const double mean = M.col(j).mean();
    v[j] = (M.col(j).array() - mean).square().sum() / n;
  }
  return v;
}

Eigen::MatrixXd standardize_columns(const Eigen::MatrixXd& X) {
  if (X.rows() < 2) throw InvalidArgument("standardize_columns: need at least 2 rows");
  Eigen::MatrixXd out(X.rows(), X.cols());
  const double n = static_cast<double>(X.rows());
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    const double mean = X.col(j).mean();
    const Eigen::ArrayXd centered = X.col(j).array() - mean;
    const double sd = std::sqrt(centered.square().sum() / n);
    if (!(sd > 0.0)) throw InvalidArgument("covariate column " + std::to_string(j) + " has zero variance");
    out.col(j) = (centered / sd).matrix();
  }
  return out;
}

namespace {

Eigen::MatrixXd squared_distances(const Eigen::MatrixXd& X) {
  const Eigen::Index n = X.rows();
  const Eigen::MatrixXd Xt = X.transpose();  // columns are units
  Eigen::MatrixXd D(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    D(i, i) = 0.0;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double d = (Xt.col(i) - Xt.col(j)).squaredNorm();
      D(i, j) = d;
      D(j, i) = d;
    }
  }
  return D;
}

}  // namespace

KernelMatrix gaussian_kernel(const Eigen::MatrixXd& X, double bandwidth) {
  if (!(bandwidth > 0.0)) throw InvalidArgument("gaussian_kernel: bandwidth must be positive");
  check_rows(X.rows());
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    const double scale = 1.0 + X.col(j).cwiseAbs().maxCoeff();
    if (std::abs(X.col(j).mean()) > 1e-6 * scale)
      throw InvalidArgument("gaussian_kernel: column " + std::to_string(j) + " is not centered; standardize first");
  }
  KernelMatrix out;
  out.kind = KernelKind::Gaussian;
  out.K = (-squared_distances(X).array() / bandwidth).exp().matrix();
  out.K.diagonal().setOnes();
  return out;
}

double max_variance_bandwidth(const Eigen::MatrixXd& X_std, double lo, double hi, int grid_size) {
  if (!(lo > 0.0 && hi > lo) || grid_size < 2) throw InvalidArgument("max_variance_bandwidth: bad grid");
  const Eigen::MatrixXd D = squared_distances(X_std);
  const Eigen::Index n = D.rows();
  std::vector<double> offdiag;
  offdiag.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) offdiag.push_back(D(i, j));
  double best_b = lo;
  double best_var = -1.0;
  for (int g = 0; g < grid_size; ++g) {
    const double b = lo * std::pow(hi / lo, static_cast<double>(g) / (grid_size - 1));
    double sum = 0.0;
    double sum_sq = 0.0;
    for (double d : offdiag) {
      const double k = std::exp(-d / b);
      sum += k;
      sum_sq += k * k;
    }
    const double m = static_cast<double>(offdiag.size());
    const double var = m > 0 ? sum_sq / m - (sum / m) * (sum / m) : 0.0;
    if (var > best_var) {
      best_var = var;
      best_b = b;
    }
  }
  return best_b;
}

KernelMatrix polynomial_kernel(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Sigma, double c, int degree) {
  if (degree < 1) throw InvalidArgument("polynomial_kernel: degree must be at least 1");
  if (Sigma.rows() != X.cols() || Sigma.cols() != X.cols())
    throw DimensionMismatch("polynomial_kernel: Sigma must be p x p");
  if ((Sigma - Sigma.transpose()).cwiseAbs().maxCoeff() > 1e-10)
    throw InvalidArgument("polynomial_kernel: Sigma is not symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Sigma, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() < -1e-8) throw InvalidArgument("polynomial_kernel: Sigma is not PSD");
  check_rows(X.rows());
  KernelMatrix out;
  out.kind = KernelKind::Polynomial;
  out.K = X * Sigma * X.transpose();
  if (c != 0.0) out.K.array() += c;
  if (degree > 1) out.K = out.K.array().pow(static_cast<double>(degree)).matrix();
  return out;
}

double kernel_imbalance(const KernelMatrix& kernel, const Eigen::VectorXd& w, const Eigen::VectorXi& Z) {
  const Eigen::Index n = kernel.size();
  if (w.size() != n || Z.size() != n) throw DimensionMismatch("kernel_imbalance: w, Z and K disagree on n");
  if ((w.array() < 0.0).any()) throw InvalidArgument("kernel_imbalance: weights must be nonnegative");
  const auto n1 = Z.sum();
  if (n1 == 0) throw InvalidArgument("kernel_imbalance: no treated units");
  Eigen::VectorXd a(n);
  for (Eigen::Index i = 0; i < n; ++i)
    a[i] = Z[i] == 1 ? -1.0 / static_cast<double>(n1) : w[i];
  const double value = a.dot(kernel.K * a);
  return std::max(value, 0.0);
}

}  // namespace fkb
