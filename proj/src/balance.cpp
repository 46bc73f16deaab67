#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>

#include "fkb/balance.hpp"
#include "fkb/csv.hpp"
#include "fkb/error.hpp"

namespace fkb {

Eigen::VectorXd project_to_simplex(const Eigen::VectorXd& v) {
  const Eigen::Index n = v.size();
  if (n == 0) throw InvalidArgument("project_to_simplex: empty vector");
  std::vector<double> u(v.data(), v.data() + n);
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumsum = 0.0;
  double theta = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    cumsum += u[static_cast<std::size_t>(j)];
    const double t = (cumsum - 1.0) / static_cast<double>(j + 1);
    if (u[static_cast<std::size_t>(j)] - t > 0.0) theta = t;
  }
  return (v.array() - theta).cwiseMax(0.0).matrix();
}

namespace {

struct ControlView {
  Eigen::MatrixXd A;       // n0 x q, control feature rows
  Eigen::VectorXd target;  // treated feature mean
  std::vector<Eigen::Index> control_index;
};

ControlView control_view(const BalanceProblem& problem) {
  const Eigen::Index n = problem.Phi.rows();
  if (problem.Z.size() != n) throw DimensionMismatch("balance problem: Z length differs from feature rows");
  if (!problem.Phi.allFinite()) throw InvalidArgument("balance problem: non-finite features");
  if (!(problem.lambda >= 0.0) || !std::isfinite(problem.lambda))
    throw InvalidArgument("balance problem: lambda must be a finite nonnegative number");
  ControlView view;
  Eigen::Index n1 = 0;
  view.target = Eigen::VectorXd::Zero(problem.Phi.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    if (problem.Z[i] == 1) {
      view.target += problem.Phi.row(i).transpose();
      ++n1;
    } else if (problem.Z[i] == 0) {
      view.control_index.push_back(i);
    } else {
      throw InvalidArgument("balance problem: Z must be 0 or 1");
    }
  }
  if (n1 == 0) throw InvalidArgument("balance problem: no treated units");
  if (view.control_index.empty()) throw InvalidArgument("balance problem: empty control set");
  view.target /= static_cast<double>(n1);
  view.A.resize(static_cast<Eigen::Index>(view.control_index.size()), problem.Phi.cols());
  for (std::size_t k = 0; k < view.control_index.size(); ++k)
    view.A.row(static_cast<Eigen::Index>(k)) = problem.Phi.row(view.control_index[k]);
  return view;
}

double spectral_norm_sq(const Eigen::MatrixXd& A) {
  const Eigen::MatrixXd G = A.transpose() * A;
  const Eigen::Index q = G.rows();
  if (q == 0) return 0.0;
  Eigen::VectorXd v = Eigen::VectorXd::Ones(q) / std::sqrt(static_cast<double>(q));
  double rho = 0.0;
  for (int it = 0; it < 1000; ++it) {
    Eigen::VectorXd gv = G * v;
    const double norm = gv.norm();
    if (norm == 0.0) return 0.0;
    const double next = v.dot(gv);
    v = gv / norm;
    if (std::abs(next - rho) <= 1e-12 * std::abs(next)) {
      rho = next;
      break;
    }
    rho = next;
  }
  return rho;
}

}  // namespace

ObjectiveValue balance_objective(const BalanceProblem& problem, const Eigen::VectorXd& w) {
  const auto view = control_view(problem);
  if (w.size() != view.A.rows()) throw DimensionMismatch("balance_objective: w length differs from n0");
  ObjectiveValue v;
  v.imbalance_sq = (view.A.transpose() * w - view.target).squaredNorm();
  v.dispersion = w.squaredNorm();
  v.total = v.imbalance_sq + problem.lambda * v.dispersion;
  return v;
}

WeightSolution solve_weights(const BalanceProblem& problem, const SolverOptions& options) {
  const auto view = control_view(problem);
  const auto& A = view.A;
  const auto& t = view.target;
  const double lambda = problem.lambda;
  const Eigen::Index n0 = A.rows();

  WeightSolution sol;
  sol.control_index = view.control_index;
  sol.lambda = lambda;

  auto objective = [&](const Eigen::VectorXd& w, double& imbalance) {
    imbalance = (A.transpose() * w - t).squaredNorm();
    return imbalance + lambda * w.squaredNorm();
  };
  auto gradient = [&](const Eigen::VectorXd& w) -> Eigen::VectorXd {
    return 2.0 * (A * (A.transpose() * w - t)) + 2.0 * lambda * w;
  };

  if (n0 == 1) {
    sol.w = Eigen::VectorXd::Ones(1);
    sol.objective = objective(sol.w, sol.imbalance_sq);
    sol.converged = true;
    sol.ess = 1.0;
    sol.warnings.push_back("single control unit: returning the point mass");
    return sol;
  }

  // Small margin over the power-iteration estimate, which approaches from below.
  double L = 2.0 * (spectral_norm_sq(A) * (1.0 + 1e-6) + lambda);
  if (!(L > 0.0)) L = 1.0;

  Eigen::VectorXd x = Eigen::VectorXd::Constant(n0, 1.0 / static_cast<double>(n0));
  Eigen::VectorXd residual = A.transpose() * x - t;
  double imbalance = 0.0;
  double fx = objective(x, imbalance);
  // Changes this small relative to the objective are indistinguishable from zero.
  constexpr double roundoff = 64.0 * std::numeric_limits<double>::epsilon();
  Eigen::VectorXd y = x;
  double theta = 1.0;
  bool just_restarted = false;

  auto stationarity = [&](const Eigen::VectorXd& w) {
    return L * (w - project_to_simplex(w - gradient(w) / L)).norm();
  };

  int it = 0;
  if (stationarity(x) <= options.tol) sol.converged = true;
  while (!sol.converged && it < options.max_iter) {
    ++it;
    Eigen::VectorXd x_new = project_to_simplex(y - gradient(y) / L);
    // Objective change expanded around x; differencing two objective values
    // loses the decrease in round-off near the optimum.
    const Eigen::VectorXd d = x_new - x;
    const Eigen::VectorXd Ad = A.transpose() * d;
    const double change = 2.0 * residual.dot(Ad) + Ad.squaredNorm() + lambda * (2.0 * x.dot(d) + d.squaredNorm());
    if (change > roundoff * fx) {
      // Momentum overshot: restart from the current iterate. A plain step
      // that still increases means L was underestimated.
      if (just_restarted) L *= 2.0;
      y = x;
      theta = 1.0;
      just_restarted = true;
      continue;
    }
    just_restarted = false;
    const double theta_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * theta * theta));
    y = x_new + ((theta - 1.0) / theta_next) * d;
    theta = theta_next;
    x = std::move(x_new);
    residual += Ad;
    fx += change;
    if (stationarity(x) <= options.tol) sol.converged = true;
  }

  sol.w = std::move(x);
  sol.iterations = it;
  sol.objective = objective(sol.w, sol.imbalance_sq);
  sol.ess = ess(sol.w);
  if (!sol.converged)
    sol.warnings.push_back("balancing solver hit max_iter before reaching tol; returning best iterate");
  return sol;
}

double lambda_heuristic(const Eigen::MatrixXd& Phi, const Eigen::VectorXd& Y, const Eigen::VectorXi& Z) {
  const Eigen::Index n = Phi.rows();
  if (Y.size() != n || Z.size() != n) throw DimensionMismatch("lambda_heuristic: Phi, Y, Z disagree on n");
  std::vector<Eigen::Index> controls;
  for (Eigen::Index i = 0; i < n; ++i)
    if (Z[i] == 0) controls.push_back(i);
  const auto n0 = static_cast<Eigen::Index>(controls.size());
  if (n0 <= 1) throw InvalidArgument("lambda_heuristic: need at least 2 control units");

  const Eigen::Index q = Phi.cols();
  Eigen::MatrixXd D(n0, q + 1);
  Eigen::VectorXd y(n0);
  for (Eigen::Index k = 0; k < n0; ++k) {
    const auto i = controls[static_cast<std::size_t>(k)];
    D(k, 0) = 1.0;
    D.row(k).tail(q) = Phi.row(i);
    y[k] = Y[i];
  }
  const double mean = y.mean();
  const double sd = std::sqrt((y.array() - mean).square().sum() / static_cast<double>(n0));
  if (!(sd > 0.0)) return 0.0;
  y = ((y.array() - mean) / sd).matrix();

  Eigen::MatrixXd gram = D.transpose() * D;
  gram.diagonal().array() += 1e-8;
  const Eigen::VectorXd beta = gram.ldlt().solve(D.transpose() * y);
  return (y - D * beta).squaredNorm() / static_cast<double>(n0);
}

namespace {

double log1p_exp(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace

IpwWeights logistic_ipw(const Eigen::MatrixXd& Phi, const Eigen::VectorXi& Z, double clip_eps) {
  const Eigen::Index n = Phi.rows();
  if (Z.size() != n) throw DimensionMismatch("logistic_ipw: Z length differs from feature rows");
  if (!(clip_eps > 0.0 && clip_eps < 0.5)) throw InvalidArgument("logistic_ipw: clip_eps must lie in (0, 0.5)");
  if (!Phi.allFinite()) throw InvalidArgument("logistic_ipw: non-finite features");
  const auto n1 = Z.sum();
  if (n1 == 0 || n1 == n) throw InvalidArgument("logistic_ipw: need both treated and control units");

  constexpr double ridge = 1e-8;
  constexpr double tol = 1e-10;
  constexpr int max_iter = 100;

  const Eigen::Index d = Phi.cols() + 1;
  Eigen::MatrixXd D(n, d);
  D.col(0).setOnes();
  D.rightCols(Phi.cols()) = Phi;
  const Eigen::VectorXd z = Z.cast<double>();

  auto penalized_loglik = [&](const Eigen::VectorXd& beta) {
    const Eigen::VectorXd eta = D * beta;
    double ll = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) ll += z[i] * eta[i] - log1p_exp(eta[i]);
    return ll - 0.5 * ridge * beta.squaredNorm();
  };

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(d);
  const double base = static_cast<double>(n1) / static_cast<double>(n);
  beta[0] = std::log(base / (1.0 - base));
  double ll = penalized_loglik(beta);
  int it = 0;
  bool converged = false;
  double decrement = 0.0;
  while (it < max_iter) {
    ++it;
    const Eigen::VectorXd eta = D * beta;
    Eigen::VectorXd p(n);
    Eigen::VectorXd wts(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      p[i] = sigmoid(eta[i]);
      wts[i] = p[i] * (1.0 - p[i]);
    }
    const Eigen::VectorXd grad = D.transpose() * (z - p) - ridge * beta;
    Eigen::MatrixXd H = D.transpose() * wts.asDiagonal() * D;
    H.diagonal().array() += ridge;
    const Eigen::VectorXd step = H.ldlt().solve(grad);
    decrement = grad.dot(step);
    if (!std::isfinite(decrement)) break;
    if (decrement <= tol) {
      converged = true;
      break;
    }
    double s = 1.0;
    double ll_new = penalized_loglik(beta + step);
    while (!(ll_new >= ll) && s > 1e-12) {
      s *= 0.5;
      ll_new = penalized_loglik(beta + s * step);
    }
    if (!(ll_new >= ll)) break;
    beta += s * step;
    const double gain = ll_new - ll;
    ll = ll_new;
    if (gain <= tol * (1.0 + std::abs(ll)) && s * step.cwiseAbs().maxCoeff() <= tol * (1.0 + beta.cwiseAbs().maxCoeff())) {
      converged = true;
      break;
    }
  }
  if (!converged)
    throw SolverError("logistic_ipw: Newton iterations failed to converge after " + std::to_string(it) +
                      " iterations (Newton decrement " + std::to_string(decrement) + ", log-likelihood " +
                      std::to_string(ll) + ")");

  IpwWeights out;
  out.coefficients = beta;
  out.iterations = it;
  const Eigen::VectorXd eta = D * beta;
  std::vector<double> w;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (Z[i] != 0) continue;
    const double e = std::clamp(sigmoid(eta[i]), clip_eps, 1.0 - clip_eps);
    w.push_back(e / (1.0 - e));
    out.control_index.push_back(i);
  }
  out.w = Eigen::Map<Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
  out.w /= out.w.sum();
  out.ess = ess(out.w);
  return out;
}

double ess(const Eigen::VectorXd& w) {
  const double sq = w.squaredNorm();
  if (!(sq > 0.0)) throw InvalidArgument("ess: weights are all zero");
  const double s = w.sum();
  return s * s / sq;
}

double estimate_att(const Eigen::VectorXd& w, const Eigen::VectorXd& Y, const Eigen::VectorXi& Z) {
  const Eigen::Index n = Y.size();
  if (Z.size() != n) throw DimensionMismatch("estimate_att: Y and Z disagree on n");
  double treated_sum = 0.0;
  Eigen::Index n1 = 0;
  double control_mean = 0.0;
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (Z[i] == 1) {
      treated_sum += Y[i];
      ++n1;
    } else {
      if (k >= w.size()) throw DimensionMismatch("estimate_att: fewer weights than control units");
      control_mean += w[k++] * Y[i];
    }
  }
  if (k != w.size()) throw DimensionMismatch("estimate_att: more weights than control units");
  if (n1 == 0) throw InvalidArgument("estimate_att: no treated units");
  return treated_sum / static_cast<double>(n1) - control_mean;
}

void write_weights_csv(const std::string& path, const WeightSolution& solution) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << "unit_id,weight\n";
  for (Eigen::Index k = 0; k < solution.w.size(); ++k)
    out << solution.control_index[static_cast<std::size_t>(k)] << ',' << csv::format(solution.w[k]) << '\n';
}

void write_diagnostics_csv(const std::string& path, const WeightSolution& solution) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << "objective,imbalance_sq,lambda,ess,iterations,converged\n"
      << csv::format(solution.objective) << ',' << csv::format(solution.imbalance_sq) << ','
      << csv::format(solution.lambda) << ',' << csv::format(solution.ess) << ',' << solution.iterations << ','
      << (solution.converged ? 1 : 0) << '\n';
}

}  // namespace fkb
