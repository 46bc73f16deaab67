#include <atomic>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "fkb/csv.hpp"
#include "fkb/error.hpp"
#include "fkb/pipeline.hpp"
#include "fkb/rng.hpp"

namespace fkb {

ErrorSummary summarize_metrics(const std::vector<double>& per_rep_errors) {
  ErrorSummary s;
  double sum = 0.0;
  double sum_sq = 0.0;
  int used = 0;
  for (double e : per_rep_errors) {
    if (std::isnan(e)) {
      ++s.failures;
      continue;
    }
    sum += e;
    sum_sq += e * e;
    ++used;
  }
  if (used == 0) throw InvalidArgument("summarize_metrics: no non-NaN replications");
  s.abs_rel_bias = std::abs(sum / used);
  s.rel_rmse = std::sqrt(sum_sq / used);
  return s;
}

namespace {

// Configurations with equal keys share one kernel stage within a replication.
std::string stage_key(const PipelineConfig& c) {
  std::ostringstream key;
  key << kernel_name(c.kernel);
  switch (c.kernel) {
    case KernelChoice::RF:
      key << ':' << c.forest.num_trees << ':' << c.forest.mtry.value_or(-1) << ':' << c.forest.min_leaf << ':'
          << c.forest.max_depth.value_or(-1) << ':' << c.forest.bootstrap;
      break;
    case KernelChoice::BART: {
      const auto& b = c.bart;
      key << ':' << b.num_trees << ':' << b.burn_in << ':' << b.draws << ':' << b.thin << ':' << b.alpha << ':'
          << b.beta << ':' << b.k << ':' << b.nu << ':' << b.q << ':' << b.max_cutpoints;
      break;
    }
    case KernelChoice::GaussianKbal:
      key << ':' << c.gaussian.bandwidth.value_or(-1.0) << ':' << c.gaussian.maximize_variance;
      break;
    case KernelChoice::None:
      break;
  }
  return key.str();
}

struct StageSlot {
  std::optional<KernelStage> stage;
  bool failed = false;
};

std::vector<RepOutcome> run_replication(const DgpSpec& dgp, const std::vector<PipelineConfig>& grid,
                                        std::uint64_t rep_seed, const FitOverride& fit_override) {
  std::vector<RepOutcome> out(grid.size());
  LabeledSample analysis;
  LabeledSample pilot;
  double truth = 0.0;
  try {
    DgpSpec a = dgp;
    a.seed = derive_seed(rep_seed, 1);
    analysis = gen_dataset(a);
    DgpSpec p = dgp;
    p.seed = derive_seed(rep_seed, 2);
    const LabeledSample pilot_draw = gen_dataset(p);
    pilot = pilot_draw.subset(pilot_draw.control_indices());
    truth = true_att(analysis);
  } catch (const std::exception&) {
    return out;
  }

  std::map<std::string, StageSlot> stages;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    PipelineConfig config = grid[g];
    config.seed = rep_seed;
    out[g].truth = truth;
    try {
      FitResult fit;
      if (fit_override) {
        fit = fit_override(pilot, analysis, config);
      } else {
        auto& slot = stages[stage_key(config)];
        if (slot.failed) continue;
        if (!slot.stage) {
          try {
            slot.stage = build_kernel_stage(pilot, analysis, config);
          } catch (const std::exception&) {
            slot.failed = true;
            continue;
          }
        }
        fit = finish_fit(*slot.stage, analysis, config);
        if (!fit.converged) continue;
      }
      out[g].estimate = fit.att;
      out[g].ess = fit.ess;
    } catch (const std::exception&) {
      // Recorded as NaN.
    }
  }
  return out;
}

}  // namespace

std::vector<MetricsRow> run_monte_carlo(const DgpSpec& dgp, const std::vector<PipelineConfig>& grid, int reps,
                                        const MonteCarloOptions& options) {
  if (reps < 1) throw InvalidArgument("run_monte_carlo: reps must be >= 1");
  if (grid.empty()) throw InvalidArgument("run_monte_carlo: empty configuration grid");
  for (const auto& c : grid) c.validate();
  {
    DgpSpec probe = dgp;  // validates the design before any replication runs
    probe.n = std::max<Eigen::Index>(dgp.n, 2);
    if (dgp.n < 2) throw InvalidArgument("run_monte_carlo: n must be >= 2");
    gen_dataset(probe);
  }

  std::vector<std::vector<RepOutcome>> by_rep(static_cast<std::size_t>(reps));
  std::atomic<int> next{0};
  std::mutex error_mutex;
  std::exception_ptr error;
  auto worker = [&] {
    for (;;) {
      const int s = next.fetch_add(1);
      if (s >= reps) return;
      try {
        by_rep[static_cast<std::size_t>(s)] =
            run_replication(dgp, grid, derive_seed(options.base_seed, static_cast<std::uint64_t>(s)),
                            options.fit_override);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  const int jobs = std::max(1, std::min(options.jobs, reps));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
  }
  if (error) std::rethrow_exception(error);

  const bool relative = dgp.kind == DgpKind::Tarr;
  std::vector<MetricsRow> rows;
  if (options.outcomes) options.outcomes->assign(grid.size(), {});
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const auto& config = grid[g];
    MetricsRow row;
    row.feature_grouping = grouping_label(config);
    row.kernel = kernel_name(config.kernel);
    row.num_pcs = config.kernel == KernelChoice::None ? 0 : config.r;
    row.estimator = config.estimator;
    row.reps = reps;
    std::vector<double> errors;
    double ess_sum = 0.0;
    int ess_count = 0;
    for (int s = 0; s < reps; ++s) {
      const auto& o = by_rep[static_cast<std::size_t>(s)][g];
      if (options.outcomes) (*options.outcomes)[g].push_back(o);
      double e = o.estimate - o.truth;
      if (relative) e /= o.truth;
      errors.push_back(std::isfinite(e) ? e : std::numeric_limits<double>::quiet_NaN());
      if (std::isfinite(o.ess)) {
        ess_sum += o.ess;
        ++ess_count;
      }
    }
    try {
      const auto summary = summarize_metrics(errors);
      row.abs_rel_bias = summary.abs_rel_bias;
      row.rel_rmse = summary.rel_rmse;
      row.failures = summary.failures;
    } catch (const InvalidArgument&) {
      row.abs_rel_bias = row.rel_rmse = std::numeric_limits<double>::quiet_NaN();
      row.failures = reps;
    }
    row.ess_mean = ess_count > 0 ? ess_sum / ess_count : std::numeric_limits<double>::quiet_NaN();
    rows.push_back(row);
  }
  return rows;
}

void write_results_csv(std::ostream& out, const std::vector<MetricsRow>& rows) {
  out << kResultsHeader << '\n';
  for (const auto& r : rows) {
    out << r.feature_grouping << ',' << r.kernel << ',' << r.num_pcs << ',' << r.reps << ','
        << csv::format(r.abs_rel_bias) << ',' << csv::format(r.rel_rmse) << ',' << csv::format(r.ess_mean) << ','
        << r.failures << '\n';
  }
}

void write_results_csv_file(const std::string& path, const std::vector<MetricsRow>& rows) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  write_results_csv(out, rows);
}

}  // namespace fkb
