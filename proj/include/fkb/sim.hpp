#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace fkb {

enum class DgpTag { Tarr, Kim, External };

/// Covariates, treatment and outcome for n units. Simulated samples also
/// carry both potential outcomes so the realized ATT is known exactly.
struct LabeledSample {
  Eigen::MatrixXd X;  // n x p
  Eigen::VectorXi Z;  // 1 = treated
  Eigen::VectorXd Y;
  std::optional<Eigen::VectorXd> y0;
  std::optional<Eigen::VectorXd> y1;
  DgpTag dgp_tag = DgpTag::External;
  std::vector<std::string> covariate_names;

  Eigen::Index size() const { return X.rows(); }
  Eigen::Index num_features() const { return X.cols(); }
  Eigen::Index num_treated() const { return Z.sum(); }
  Eigen::Index num_control() const { return size() - num_treated(); }
  bool has_potential_outcomes() const { return y0.has_value() && y1.has_value(); }

  std::vector<Eigen::Index> treated_indices() const;
  std::vector<Eigen::Index> control_indices() const;
  /// Rows `rows` in the given order, potential outcomes carried along.
  LabeledSample subset(std::span<const Eigen::Index> rows) const;
};

enum class DgpKind { Tarr, Kim };

struct DgpSpec {
  DgpKind kind = DgpKind::Tarr;
  Eigen::Index n = 1000;
  std::optional<double> sigma_eps_sq;  // Kim only: 30 low overlap, 100 high overlap
  std::uint64_t seed = 0;

  static DgpSpec tarr(Eigen::Index n, std::uint64_t seed);
  static DgpSpec kim(Eigen::Index n, double sigma_eps_sq, std::uint64_t seed);
};

/// Draws a sample from the requested design.
///
/// Tarr design, per unit in order: W1..W10 (10 normals), one uniform u with
/// Z = 1{u < logit^-1(-W1 - 0.1 W4)}, one normal noise term shared by both
/// potential outcomes.
///
/// Kim design, per unit in order: three normals e1..e3 mapped through the
/// Cholesky factor of the covariate covariance
///     L = [[sqrt2, 0, 0], [1/sqrt2, sqrt(1/2), 0], [-1/sqrt2, 0, sqrt(1/2)]],
/// one uniform for X4 = -3 + 6u, one normal g with X5 = g^2, one uniform with
/// X6 = 1{u < 0.5}, one normal for the treatment score noise (scaled by
/// sqrt(sigma_eps_sq)), one normal for the outcome noise. Y does not depend on Z.
LabeledSample gen_dataset(const DgpSpec& spec);

/// Mean of y1 - y0 over treated units.
double true_att(const LabeledSample& sample);

/// Reads a CSV with a header row. Every column except `treatment_col` and
/// `outcome_col` becomes a covariate, in file order.
LabeledSample read_labeled_csv(const std::string& path, const std::string& treatment_col,
                               const std::string& outcome_col);

/// Applies `fn` to every entry of the listed covariate columns in place.
template <typename Fn>
void transform_columns(LabeledSample& sample, std::span<const Eigen::Index> cols, Fn fn) {
  for (auto c : cols) sample.X.col(c) = sample.X.col(c).unaryExpr(fn);
}

namespace debug {

struct TarrUnit {
  std::array<double, 10> x;
  double propensity;
  double y0;
  double y1;
};

/// Evaluates the Tarr design at a forced latent draw W and outcome noise eps.
TarrUnit tarr_unit(const std::array<double, 10>& w, double eps);

/// Builds a Tarr sample from forced latent rows (n x 10), treatment
/// uniforms and outcome noise.
LabeledSample tarr_from_latent(const Eigen::MatrixXd& W, const Eigen::VectorXd& treatment_uniform,
                               const Eigen::VectorXd& eps);

}  // namespace debug

}  // namespace fkb
