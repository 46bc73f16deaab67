#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fkb/kernel.hpp"

namespace fkb {

/// Simplex weights over the control units (in sample order) and solver diagnostics.
struct WeightSolution {
  Eigen::VectorXd w;
  std::vector<Eigen::Index> control_index;  // sample row of each entry of w
  double objective = 0.0;
  double imbalance_sq = 0.0;
  double lambda = 0.0;
  int iterations = 0;
  bool converged = false;
  double ess = 0.0;
  std::vector<std::string> warnings;
};

struct BalanceProblem {
  Eigen::MatrixXd Phi;  // n x q balancing features over all units
  Eigen::VectorXi Z;
  double lambda = 0.0;
};

struct SolverOptions {
  double tol = 1e-8;
  int max_iter = 10000;
};

/// Minimizes ||sum_c w_c phi_c - mean_treated(phi)||^2 + lambda ||w||^2 over
/// the control simplex with accelerated projected gradient (step 1/L,
/// L = 2 (||Phi_c' Phi_c||_2 + lambda)) and restart whenever the objective
/// would increase. Converged when the gradient-mapping norm is <= tol.
WeightSolution solve_weights(const BalanceProblem& problem, const SolverOptions& options = {});

/// Objective of `w` (controls only) for `problem`, split into its two terms.
struct ObjectiveValue {
  double imbalance_sq = 0.0;
  double dispersion = 0.0;
  double total = 0.0;
};
ObjectiveValue balance_objective(const BalanceProblem& problem, const Eigen::VectorXd& w);

/// Euclidean projection onto the probability simplex.
Eigen::VectorXd project_to_simplex(const Eigen::VectorXd& v);

/// Residual variance from a ridge (1e-8) least-squares fit, with intercept,
/// of the control outcomes (standardized over controls) on Phi.
double lambda_heuristic(const Eigen::MatrixXd& Phi, const Eigen::VectorXd& Y, const Eigen::VectorXi& Z);

struct IpwWeights {
  Eigen::VectorXd w;  // over controls, sums to 1
  std::vector<Eigen::Index> control_index;
  Eigen::VectorXd coefficients;  // intercept first
  int iterations = 0;
  double ess = 0.0;
};

/// Logistic regression of Z on [1, Phi] by damped Newton; controls get
/// weight proportional to e/(1 - e) with e clipped to [clip_eps, 1 - clip_eps].
IpwWeights logistic_ipw(const Eigen::MatrixXd& Phi, const Eigen::VectorXi& Z, double clip_eps = 1e-6);

/// (sum w)^2 / sum w^2.
double ess(const Eigen::VectorXd& w);

/// Treated mean of Y minus the w-weighted control mean. `w` is over controls
/// in sample order.
double estimate_att(const Eigen::VectorXd& w, const Eigen::VectorXd& Y, const Eigen::VectorXi& Z);

/// `unit_id,weight` rows for the controls.
void write_weights_csv(const std::string& path, const WeightSolution& solution);
/// One header line and one row: objective,imbalance_sq,lambda,ess,iterations,converged.
void write_diagnostics_csv(const std::string& path, const WeightSolution& solution);

}  // namespace fkb
