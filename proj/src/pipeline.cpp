#include <algorithm>
#include <cmath>
#include <numeric>

#include "fkb/error.hpp"
#include "fkb/pipeline.hpp"
#include "fkb/rng.hpp"

namespace fkb {

namespace {
constexpr std::uint64_t kRfStream = 3;
constexpr std::uint64_t kBartStream = 4;
constexpr std::uint64_t kSplitStream = 5;
}  // namespace

std::string kernel_name(KernelChoice kernel) {
  switch (kernel) {
    case KernelChoice::RF: return "rf";
    case KernelChoice::BART: return "bart";
    case KernelChoice::GaussianKbal: return "kbal";
    case KernelChoice::None: return "none";
  }
  return "?";
}

std::string grouping_label(const PipelineConfig& config) {
  if (config.kernel == KernelChoice::None) return "raw";
  return kernel_name(config.kernel) + (config.mode == FeatureMode::KernelOnly ? "_only" : "_plus");
}

void PipelineConfig::validate() const {
  const bool raw = mode == FeatureMode::RawOnly;
  if (raw != (kernel == KernelChoice::None))
    throw InvalidArgument("pipeline config: RawOnly features go with kernel None and only then");
  if (kernel != KernelChoice::None && r < 1) throw InvalidArgument("pipeline config: r must be >= 1");
  if (cross_fits < 1) throw InvalidArgument("pipeline config: cross_fits must be >= 1");
  if (lambda && !(*lambda >= 0.0)) throw InvalidArgument("pipeline config: lambda must be nonnegative");
  if (gaussian.bandwidth && !(*gaussian.bandwidth > 0.0))
    throw InvalidArgument("pipeline config: bandwidth must be positive");
}

KernelStage build_kernel_stage(const LabeledSample& pilot, const LabeledSample& analysis,
                               const PipelineConfig& config) {
  KernelStage stage;
  stage.kernel = config.kernel;
  switch (config.kernel) {
    case KernelChoice::None:
      return stage;
    case KernelChoice::GaussianKbal: {
      const Eigen::MatrixXd Xs = standardize_columns(analysis.X);
      double b = 2.0 * static_cast<double>(Xs.cols());
      if (config.gaussian.bandwidth) {
        b = *config.gaussian.bandwidth;
      } else if (config.gaussian.maximize_variance) {
        b = max_variance_bandwidth(Xs);
      }
      stage.decomposition = decompose(gaussian_kernel(Xs, b));
      return stage;
    }
    case KernelChoice::RF:
    case KernelChoice::BART:
      break;
  }
  if (pilot.size() == 0) throw InvalidArgument("pilot sample is empty");
  if (pilot.num_treated() > 0)
    throw InvalidArgument("pilot sample must contain control units only (found " +
                          std::to_string(pilot.num_treated()) + " treated)");
  if (pilot.num_features() != analysis.num_features())
    throw DimensionMismatch("pilot and analysis samples have different covariates");
  const EnsembleModel model =
      config.kernel == KernelChoice::RF
          ? fit_random_forest(pilot.X, pilot.Y, config.forest, derive_seed(config.seed, kRfStream))
          : fit_bart(pilot.X, pilot.Y, config.bart, derive_seed(config.seed, kBartStream));
  stage.decomposition = decompose(forest_kernel(model, analysis.X));
  return stage;
}

FitResult finish_fit(const KernelStage& stage, const LabeledSample& analysis, const PipelineConfig& config) {
  config.validate();
  if (stage.kernel != config.kernel) throw InvalidArgument("kernel stage does not match the configuration");
  if (analysis.num_treated() == 0 || analysis.num_control() == 0)
    throw InvalidArgument("analysis sample needs treated and control units");

  FitResult fit;
  std::optional<SpectralFeatures> spectral;
  if (config.kernel != KernelChoice::None) {
    Eigen::Index r = config.r;
    if (r > analysis.size()) {
      fit.warnings.push_back("r = " + std::to_string(r) + " exceeds the analysis size; capped at " +
                             std::to_string(analysis.size()));
      r = analysis.size();
    }
    spectral = truncate(*stage.decomposition, r);
    if (spectral->r < r)
      fit.warnings.push_back("r capped at " + std::to_string(spectral->r) + " non-negligible eigenvalues");
    fit.r_used = spectral->r;
  }
  const FeatureMatrix features = assemble_features(analysis.X, spectral, config.mode);

  if (config.estimator == Estimator::BalancingWeights) {
    BalanceProblem problem{features.Phi, analysis.Z, 0.0};
    problem.lambda = config.lambda ? *config.lambda : lambda_heuristic(features.Phi, analysis.Y, analysis.Z);
    WeightSolution sol = solve_weights(problem, config.solver);
    fit.att = estimate_att(sol.w, analysis.Y, analysis.Z);
    fit.ess = sol.ess;
    fit.lambda = sol.lambda;
    fit.objective = sol.objective;
    fit.imbalance_sq = sol.imbalance_sq;
    fit.iterations = sol.iterations;
    fit.converged = sol.converged;
    fit.weights = std::move(sol.w);
    fit.control_index = std::move(sol.control_index);
    for (auto& w : sol.warnings) fit.warnings.push_back(std::move(w));
  } else {
    IpwWeights ipw = logistic_ipw(features.Phi, analysis.Z, config.ipw_clip);
    fit.att = estimate_att(ipw.w, analysis.Y, analysis.Z);
    fit.ess = ipw.ess;
    fit.iterations = ipw.iterations;
    fit.weights = std::move(ipw.w);
    fit.control_index = std::move(ipw.control_index);
  }
  return fit;
}

FitResult run_forest_kbal(const LabeledSample& pilot, const LabeledSample& analysis, const PipelineConfig& config) {
  config.validate();
  return finish_fit(build_kernel_stage(pilot, analysis, config), analysis, config);
}

RunResult run_cross_fit(const LabeledSample& sample, const PipelineConfig& config) {
  config.validate();
  RunResult result;
  const bool design_based = config.kernel == KernelChoice::None || config.kernel == KernelChoice::GaussianKbal;
  if (design_based) {
    result.fits.push_back(run_forest_kbal(LabeledSample{}, sample, config));
  } else {
    const auto controls = sample.control_indices();
    const auto treated = sample.treated_indices();
    if (controls.size() < 4) throw InvalidArgument("cross-fitting needs at least 4 control units");
    std::vector<Eigen::Index> shuffled;
    for (int s = 0; s < config.cross_fits; ++s) {
      if (s % 2 == 0) {
        shuffled = controls;
        Rng rng(derive_seed(config.seed, kSplitStream + static_cast<std::uint64_t>(s / 2) * 16));
        for (std::size_t k = shuffled.size() - 1; k > 0; --k) std::swap(shuffled[k], shuffled[rng.below(k + 1)]);
      }
      const auto half = static_cast<std::ptrdiff_t>(shuffled.size() / 2);
      std::vector<Eigen::Index> first(shuffled.begin(), shuffled.begin() + half);
      std::vector<Eigen::Index> second(shuffled.begin() + half, shuffled.end());
      if (s % 2 == 1) std::swap(first, second);
      std::sort(first.begin(), first.end());
      std::vector<Eigen::Index> analysis_rows = second;
      analysis_rows.insert(analysis_rows.end(), treated.begin(), treated.end());
      std::sort(analysis_rows.begin(), analysis_rows.end());

      PipelineConfig fit_config = config;
      fit_config.seed = derive_seed(config.seed, 1000 + static_cast<std::uint64_t>(s));
      result.fits.push_back(run_forest_kbal(sample.subset(first), sample.subset(analysis_rows), fit_config));
    }
  }
  for (const auto& f : result.fits) {
    result.att_estimates.push_back(f.att);
    result.ess_mean += f.ess;
  }
  const double k = static_cast<double>(result.fits.size());
  result.att_mean = std::accumulate(result.att_estimates.begin(), result.att_estimates.end(), 0.0) / k;
  result.ess_mean /= k;
  if (sample.has_potential_outcomes() && sample.num_treated() > 0) result.true_att = true_att(sample);
  return result;
}

}  // namespace fkb
