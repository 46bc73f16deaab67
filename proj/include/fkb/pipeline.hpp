#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "fkb/balance.hpp"
#include "fkb/forest.hpp"
#include "fkb/kernel.hpp"
#include "fkb/sim.hpp"

namespace fkb {

enum class KernelChoice { RF, BART, GaussianKbal, None };
enum class Estimator { BalancingWeights, LogisticIPW };

struct GaussianParams {
  std::optional<double> bandwidth;  // default 2p
  bool maximize_variance = false;   // search a log-grid instead of using the default
};

struct PipelineConfig {
  KernelChoice kernel = KernelChoice::RF;
  FeatureMode mode = FeatureMode::KernelPlusRaw;
  Eigen::Index r = 25;
  int cross_fits = 1;
  Estimator estimator = Estimator::BalancingWeights;
  ForestParams forest;
  BartParams bart;
  GaussianParams gaussian;
  std::optional<double> lambda;  // default: lambda_heuristic on the balanced features
  SolverOptions solver;
  double ipw_clip = 1e-6;
  std::uint64_t seed = 0;

  /// Throws InvalidArgument when the combination is inconsistent.
  void validate() const;
};

/// Diagnostics for one pilot/analysis fit.
struct FitResult {
  double att = 0.0;
  double ess = 0.0;
  double lambda = 0.0;
  Eigen::Index r_used = 0;
  double objective = 0.0;
  double imbalance_sq = 0.0;
  int iterations = 0;
  bool converged = true;
  Eigen::VectorXd weights;  // over analysis controls, sample order
  std::vector<Eigen::Index> control_index;
  std::vector<std::string> warnings;
};

struct RunResult {
  std::vector<double> att_estimates;
  double att_mean = 0.0;
  double ess_mean = 0.0;
  std::optional<double> true_att;
  std::vector<FitResult> fits;
};

/// Kernel stage of a fit: the eigendecomposition of the analysis-sample
/// kernel, or nothing for raw-only balancing. Shared across r and modes.
struct KernelStage {
  KernelChoice kernel = KernelChoice::None;
  std::optional<SpectralDecomposition> decomposition;
};

/// Fits the pilot model (RF/BART) or builds the design kernel (Gaussian) and
/// decomposes the analysis-sample kernel. Pilot rows must all be controls.
KernelStage build_kernel_stage(const LabeledSample& pilot, const LabeledSample& analysis,
                               const PipelineConfig& config);

/// Truncation, feature assembly, weights and ATT for one configuration.
FitResult finish_fit(const KernelStage& stage, const LabeledSample& analysis, const PipelineConfig& config);

/// One pass of the forest kernel balancing procedure.
FitResult run_forest_kbal(const LabeledSample& pilot, const LabeledSample& analysis, const PipelineConfig& config);

/// Cross-fitting on observational data. Fit s uses random control halving
/// number s / 2 (seeded from config.seed), with pilot and analysis halves
/// swapped on odd s; the analysis sample adds all treated units. Design-based
/// configurations (None, GaussianKbal) use no pilot and run once on the full
/// sample.
RunResult run_cross_fit(const LabeledSample& sample, const PipelineConfig& config);

// --- Monte Carlo -----------------------------------------------------------

/// Grouping label: rf_only, rf_plus, bart_only, bart_plus, kbal_only, kbal_plus, raw.
std::string grouping_label(const PipelineConfig& config);
std::string kernel_name(KernelChoice kernel);

struct MetricsRow {
  std::string feature_grouping;
  std::string kernel;
  Eigen::Index num_pcs = 0;
  Estimator estimator = Estimator::BalancingWeights;
  int reps = 0;
  double abs_rel_bias = 0.0;  // absolute bias when the truth is zero
  double rel_rmse = 0.0;      // absolute RMSE when the truth is zero
  double ess_mean = 0.0;
  int failures = 0;
};

struct ErrorSummary {
  double abs_rel_bias = 0.0;
  double rel_rmse = 0.0;
  int failures = 0;
};

/// |mean(e)| and sqrt(mean(e^2)) over the non-NaN entries; NaNs are counted.
ErrorSummary summarize_metrics(const std::vector<double>& per_rep_errors);

/// Per-replication record for one grid entry.
struct RepOutcome {
  double estimate = std::numeric_limits<double>::quiet_NaN();
  double truth = std::numeric_limits<double>::quiet_NaN();
  double ess = std::numeric_limits<double>::quiet_NaN();
};

/// Replaces the pipeline for a grid entry (used by tests).
using FitOverride = std::function<FitResult(const LabeledSample& pilot, const LabeledSample& analysis,
                                            const PipelineConfig& config)>;

struct MonteCarloOptions {
  std::uint64_t base_seed = 0;
  int jobs = 1;
  FitOverride fit_override;
  /// Receives per-replication outcomes, indexed [grid entry][replication].
  std::vector<std::vector<RepOutcome>>* outcomes = nullptr;
};

/// Replication s uses rep_seed = derive_seed(base_seed, s). Its analysis
/// sample is drawn with derive_seed(rep_seed, 1); the pilot is a fresh draw
/// of the same size with derive_seed(rep_seed, 2), controls kept. Model seeds
/// are derive_seed(rep_seed, 3) for RF and derive_seed(rep_seed, 4) for BART.
/// Every grid entry sees the same data; kernels are built once per
/// replication and shared across r and feature modes.
std::vector<MetricsRow> run_monte_carlo(const DgpSpec& dgp, const std::vector<PipelineConfig>& grid, int reps,
                                        const MonteCarloOptions& options = {});

inline constexpr const char* kResultsHeader =
    "feature_grouping,kernel,num_pcs,reps,abs_rel_bias,rel_rmse,ess_mean,failures";

void write_results_csv(std::ostream& out, const std::vector<MetricsRow>& rows);
void write_results_csv_file(const std::string& path, const std::vector<MetricsRow>& rows);

}  // namespace fkb
