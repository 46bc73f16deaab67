#include "fkb/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>

#include "fkb/csv.hpp"
#include "fkb/error.hpp"
#include "fkb/pipeline.hpp"

namespace fkb::cli {

namespace {

// Thrown for bad flags or inputs detected before any computation starts.
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream ss(s);
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

KernelChoice parse_kernel(const std::string& name, bool allow_none) {
  if (name == "rf") return KernelChoice::RF;
  if (name == "bart") return KernelChoice::BART;
  if (name == "kbal") return KernelChoice::GaussianKbal;
  if (name == "none" && allow_none) return KernelChoice::None;
  throw ValidationError("unknown kernel '" + name + "'; valid names are {" +
                        std::string(allow_none ? "rf,bart,kbal,none" : "rf,bart,kbal") + "}");
}

FeatureMode parse_mode(const std::string& name) {
  if (name == "only") return FeatureMode::KernelOnly;
  if (name == "plus") return FeatureMode::KernelPlusRaw;
  throw ValidationError("unknown mode '" + name + "'; valid modes are {only,plus}");
}

Estimator parse_estimator(const std::string& name) {
  if (name == "balance") return Estimator::BalancingWeights;
  if (name == "ipw") return Estimator::LogisticIPW;
  throw ValidationError("unknown estimator '" + name + "'; valid estimators are {balance,ipw}");
}

DgpKind parse_dgp(const std::string& name) {
  if (name == "tarr") return DgpKind::Tarr;
  if (name == "kim") return DgpKind::Kim;
  throw ValidationError("unknown dgp '" + name + "'; valid designs are {tarr,kim}");
}

std::vector<Eigen::Index> parse_pcs(const std::string& s) {
  std::vector<Eigen::Index> out;
  for (const auto& item : split_list(s)) {
    try {
      std::size_t used = 0;
      const long v = std::stol(item, &used);
      if (used != item.size() || v < 0) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::exception&) {
      throw ValidationError("--pcs entries must be nonnegative integers, got '" + item + "'");
    }
  }
  if (out.empty()) throw ValidationError("--pcs is empty");
  return out;
}

void require_readable(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read '" + path + "'");
}

void require_writable_parent(const std::string& path) {
  const auto parent = std::filesystem::absolute(path).parent_path();
  if (!std::filesystem::is_directory(parent))
    throw ValidationError("output directory '" + parent.string() + "' does not exist");
}

struct ModelFlags {
  int rf_trees = 100;
  int min_leaf = 5;
  int bart_trees = 100;
  int bart_draws = 50;
  int bart_burn_in = 250;
  int bart_thin = 2;
  double bandwidth = 0.0;
  bool max_var_bandwidth = false;
  double lambda = -1.0;

  void add_to(CLI::App& app) {
    app.add_option("--rf-trees", rf_trees, "Random forest tree count")->check(CLI::PositiveNumber);
    app.add_option("--min-leaf", min_leaf, "Random forest minimum leaf size")->check(CLI::PositiveNumber);
    app.add_option("--bart-trees", bart_trees, "BART trees per draw")->check(CLI::PositiveNumber);
    app.add_option("--bart-draws", bart_draws, "Retained BART posterior draws")->check(CLI::PositiveNumber);
    app.add_option("--bart-burn-in", bart_burn_in, "BART burn-in iterations")->check(CLI::NonNegativeNumber);
    app.add_option("--bart-thin", bart_thin, "Keep every k-th BART iteration")->check(CLI::PositiveNumber);
    app.add_option("--bandwidth", bandwidth, "Gaussian kernel bandwidth (default 2p)")->check(CLI::PositiveNumber);
    app.add_flag("--max-var-bandwidth", max_var_bandwidth, "Pick the Gaussian bandwidth maximizing kernel variance");
    app.add_option("--lambda", lambda, "Dispersion penalty (default: residual-variance heuristic)")
        ->check(CLI::NonNegativeNumber);
  }

  void apply(PipelineConfig& c) const {
    c.forest.num_trees = rf_trees;
    c.forest.min_leaf = min_leaf;
    c.bart.num_trees = bart_trees;
    c.bart.draws = bart_draws;
    c.bart.burn_in = bart_burn_in;
    c.bart.thin = bart_thin;
    if (bandwidth > 0.0) c.gaussian.bandwidth = bandwidth;
    c.gaussian.maximize_variance = max_var_bandwidth;
    if (lambda >= 0.0) c.lambda = lambda;
  }
};

struct SimulateFlags {
  std::string dgp;
  int reps = 0;
  long n = 1000;
  double sigma_eps_sq = 30.0;
  std::string kernels = "rf,bart,kbal,none";
  std::string pcs = "2,5,10,15,25,50,100";
  std::string modes = "only,plus";
  std::string estimator = "balance";
  std::uint64_t seed = 0;
  std::string out;
  int jobs = 1;
  ModelFlags model;
};

int run_simulate(const SimulateFlags& f, std::ostream& log) {
  DgpSpec dgp;
  dgp.kind = parse_dgp(f.dgp);
  dgp.n = f.n;
  if (dgp.kind == DgpKind::Kim) dgp.sigma_eps_sq = f.sigma_eps_sq;
  if (f.n < 2) throw ValidationError("--n must be at least 2");
  const Estimator estimator = parse_estimator(f.estimator);

  std::vector<KernelChoice> kernels;
  for (const auto& k : split_list(f.kernels)) kernels.push_back(parse_kernel(k, true));
  if (kernels.empty()) throw ValidationError("--kernels is empty");
  std::vector<FeatureMode> modes;
  for (const auto& m : split_list(f.modes)) modes.push_back(parse_mode(m));
  if (modes.empty()) throw ValidationError("--modes is empty");
  const auto pcs = parse_pcs(f.pcs);

  std::vector<PipelineConfig> grid;
  bool have_raw = false;
  for (auto k : kernels) {
    PipelineConfig base;
    base.kernel = k;
    base.estimator = estimator;
    f.model.apply(base);
    if (k == KernelChoice::None) {
      if (have_raw) continue;
      have_raw = true;
      base.mode = FeatureMode::RawOnly;
      base.r = 0;
      grid.push_back(base);
      continue;
    }
    bool any = false;
    for (auto m : modes) {
      for (auto r : pcs) {
        if (r == 0) continue;  // zero components only make sense for raw balancing
        PipelineConfig c = base;
        c.mode = m;
        c.r = r;
        grid.push_back(c);
        any = true;
      }
    }
    if (!any) throw ValidationError("kernel '" + kernel_name(k) + "' needs at least one positive --pcs value");
  }
  for (const auto& c : grid) {
    try {
      c.validate();
    } catch (const InvalidArgument& e) {
      throw ValidationError(e.what());
    }
  }
  require_writable_parent(f.out);

  log << "simulate: " << grid.size() << " configurations x " << f.reps << " replications, n = " << f.n << '\n';
  MonteCarloOptions options;
  options.base_seed = f.seed;
  options.jobs = f.jobs;
  const auto rows = run_monte_carlo(dgp, grid, f.reps, options);
  write_results_csv_file(f.out, rows);
  for (const auto& r : rows)
    if (r.failures > 0) log << "warning: " << r.feature_grouping << " r=" << r.num_pcs << ": " << r.failures << " failed replications\n";
  log << "wrote " << f.out << '\n';
  return kOk;
}

struct AnalyzeFlags {
  std::string data;
  std::string treatment;
  std::string outcome;
  std::string kernel = "rf";
  std::string mode = "plus";
  long pcs = 5;
  int cross_fits = 10;
  std::string estimator = "balance";
  std::uint64_t seed = 0;
  std::string out;
  std::string weights_out;
  ModelFlags model;
};

int run_analyze(const AnalyzeFlags& f, std::ostream& log) {
  PipelineConfig config;
  config.kernel = parse_kernel(f.kernel, true);
  config.estimator = parse_estimator(f.estimator);
  if (config.kernel == KernelChoice::None) {
    config.mode = FeatureMode::RawOnly;
  } else {
    config.mode = parse_mode(f.mode);
    if (f.pcs < 1) throw ValidationError("--pcs must be positive for kernel '" + f.kernel + "'");
    config.r = f.pcs;
  }
  config.cross_fits = f.cross_fits;
  config.seed = f.seed;
  f.model.apply(config);
  try {
    config.validate();
  } catch (const InvalidArgument& e) {
    throw ValidationError(e.what());
  }
  require_readable(f.data);
  require_writable_parent(f.out);
  if (!f.weights_out.empty()) require_writable_parent(f.weights_out);

  LabeledSample sample;
  try {
    sample = load_external(f.data, f.treatment, f.outcome);
  } catch (const DataError& e) {
    throw ValidationError(e.what());
  }
  if (sample.num_treated() == 0 || sample.num_control() < 2)
    throw ValidationError("data needs at least one treated and two control units");

  const RunResult result = run_cross_fit(sample, config);
  std::ofstream out(f.out);
  if (!out) throw DataError("cannot write '" + f.out + "'");
  out << "feature_grouping,kernel,num_pcs,fit,att,ess,lambda,objective,imbalance_sq,iterations,converged\n";
  const auto label = grouping_label(config);
  const auto kname = kernel_name(config.kernel);
  for (std::size_t s = 0; s < result.fits.size(); ++s) {
    const auto& fit = result.fits[s];
    out << label << ',' << kname << ',' << fit.r_used << ',' << s << ',' << csv::format(fit.att) << ','
        << csv::format(fit.ess) << ',' << csv::format(fit.lambda) << ',' << csv::format(fit.objective) << ','
        << csv::format(fit.imbalance_sq) << ',' << fit.iterations << ',' << (fit.converged ? 1 : 0) << '\n';
    for (const auto& w : fit.warnings) log << "warning (fit " << s << "): " << w << '\n';
  }
  out << label << ',' << kname << ',' << (config.kernel == KernelChoice::None ? 0 : config.r) << ",mean,"
      << csv::format(result.att_mean) << ',' << csv::format(result.ess_mean) << ",,,,,\n";
  if (!f.weights_out.empty()) {
    // Weights of the first fit, indexed by row of the input file.
    const auto& fit = result.fits.front();
    WeightSolution sol;
    sol.w = fit.weights;
    sol.control_index = fit.control_index;
    if (config.kernel != KernelChoice::None && config.kernel != KernelChoice::GaussianKbal) {
      log << "note: weights refer to the analysis half of the first cross-fit split\n";
    }
    std::ofstream wout(f.weights_out);
    if (!wout) throw DataError("cannot write '" + f.weights_out + "'");
    wout << "unit_id,weight\n";
    for (Eigen::Index k = 0; k < sol.w.size(); ++k)
      wout << sol.control_index[static_cast<std::size_t>(k)] << ',' << csv::format(sol.w[k]) << '\n';
  }
  log << "ATT (mean over " << result.fits.size() << " fits): " << csv::format(result.att_mean) << '\n';
  return kOk;
}

struct DumpFlags {
  std::string kernel;
  std::string data;
  std::string treatment;
  std::string outcome;
  std::string dgp;
  long n = 200;
  double sigma_eps_sq = 30.0;
  std::uint64_t seed = 0;
  std::string out;
  std::string features_out;
  long pcs = 5;
  std::string mode = "plus";
  ModelFlags model;
};

int run_kernel_dump(const DumpFlags& f, std::ostream& log) {
  PipelineConfig config;
  config.kernel = parse_kernel(f.kernel, false);
  config.seed = f.seed;
  f.model.apply(config);
  const FeatureMode mode = parse_mode(f.mode);
  if (!f.features_out.empty() && f.pcs < 1) throw ValidationError("--pcs must be positive");
  if (f.data.empty() == f.dgp.empty()) throw ValidationError("give exactly one of --data or --dgp");
  require_writable_parent(f.out);

  LabeledSample sample;
  if (!f.data.empty()) {
    if (f.treatment.empty() || f.outcome.empty())
      throw ValidationError("--data requires --treatment and --outcome");
    require_readable(f.data);
    try {
      sample = load_external(f.data, f.treatment, f.outcome);
    } catch (const DataError& e) {
      throw ValidationError(e.what());
    }
  } else {
    DgpSpec spec;
    spec.kind = parse_dgp(f.dgp);
    spec.n = f.n;
    spec.seed = f.seed;
    if (spec.kind == DgpKind::Kim) spec.sigma_eps_sq = f.sigma_eps_sq;
    if (f.n < 2) throw ValidationError("--n must be at least 2");
    sample = gen_dataset(spec);
  }

  // Forest kernels are learned on the sample's controls and evaluated on every unit.
  const LabeledSample pilot = sample.subset(sample.control_indices());
  KernelMatrix K;
  switch (config.kernel) {
    case KernelChoice::RF:
      K = forest_kernel(fit_random_forest(pilot.X, pilot.Y, config.forest, config.seed), sample.X);
      break;
    case KernelChoice::BART:
      K = forest_kernel(fit_bart(pilot.X, pilot.Y, config.bart, config.seed), sample.X);
      break;
    default: {
      const Eigen::MatrixXd Xs = standardize_columns(sample.X);
      double b = config.gaussian.bandwidth.value_or(2.0 * static_cast<double>(Xs.cols()));
      if (!config.gaussian.bandwidth && config.gaussian.maximize_variance) b = max_variance_bandwidth(Xs);
      K = gaussian_kernel(Xs, b);
    }
  }
  csv::write_matrix_file(f.out, K.K);
  log << "wrote " << K.size() << "x" << K.size() << " kernel to " << f.out << '\n';
  if (!f.features_out.empty()) {
    const auto features = assemble_features(sample.X, spectral_features(K, f.pcs), mode);
    csv::write_matrix_file(f.features_out, features.Phi);
    log << "wrote " << features.Phi.rows() << "x" << features.Phi.cols() << " features to " << f.features_out << '\n';
  }
  return kOk;
}

}  // namespace

LabeledSample load_external(const std::string& path, const std::string& treatment_col,
                            const std::string& outcome_col) {
  return read_labeled_csv(path, treatment_col, outcome_col);
}

int parse_and_dispatch(const std::vector<std::string>& args, std::ostream& log) {
  CLI::App app{"Forest kernel balancing weights for ATT estimation", "fkb"};
  app.require_subcommand(1);

  SimulateFlags sim;
  auto* simulate = app.add_subcommand("simulate", "Monte Carlo sweep over kernels, feature modes and PC counts");
  simulate->add_option("--dgp", sim.dgp, "Design: tarr or kim")->required();
  simulate->add_option("--reps", sim.reps, "Monte Carlo replications")->required()->check(CLI::PositiveNumber);
  simulate->add_option("--n", sim.n, "Analysis sample size");
  simulate->add_option("--sigma-eps-sq", sim.sigma_eps_sq, "Kim design treatment noise variance")
      ->check(CLI::PositiveNumber);
  simulate->add_option("--kernels", sim.kernels, "Comma list from {rf,bart,kbal,none}");
  simulate->add_option("--pcs", sim.pcs, "Comma list of principal component counts");
  simulate->add_option("--modes", sim.modes, "Comma list from {only,plus}");
  simulate->add_option("--estimator", sim.estimator, "balance or ipw");
  simulate->add_option("--seed", sim.seed, "Base seed");
  simulate->add_option("--out", sim.out, "Results CSV path")->required();
  simulate->add_option("--jobs", sim.jobs, "Replication worker threads")->check(CLI::PositiveNumber);
  sim.model.add_to(*simulate);

  AnalyzeFlags an;
  auto* analyze = app.add_subcommand("analyze", "Cross-fitted forest kernel balancing on a CSV dataset");
  analyze->add_option("--data", an.data, "Input CSV with header")->required();
  analyze->add_option("--treatment", an.treatment, "Treatment column (0/1)")->required();
  analyze->add_option("--outcome", an.outcome, "Outcome column")->required();
  analyze->add_option("--kernel", an.kernel, "rf, bart, kbal or none");
  analyze->add_option("--mode", an.mode, "only or plus");
  analyze->add_option("--pcs", an.pcs, "Principal components to balance");
  analyze->add_option("--cross-fits", an.cross_fits, "Cross-fit iterations")->check(CLI::PositiveNumber);
  analyze->add_option("--estimator", an.estimator, "balance or ipw");
  analyze->add_option("--seed", an.seed, "Seed");
  analyze->add_option("--out", an.out, "Per-fit results CSV")->required();
  analyze->add_option("--weights-out", an.weights_out, "Control weights CSV (first fit)");
  an.model.add_to(*analyze);

  DumpFlags dump;
  auto* kdump = app.add_subcommand("kernel-dump", "Write a kernel matrix (and optionally features) as CSV");
  kdump->add_option("--kernel", dump.kernel, "rf, bart or kbal")->required();
  kdump->add_option("--data", dump.data, "Input CSV with header");
  kdump->add_option("--treatment", dump.treatment, "Treatment column");
  kdump->add_option("--outcome", dump.outcome, "Outcome column");
  kdump->add_option("--dgp", dump.dgp, "Simulate instead: tarr or kim");
  kdump->add_option("--n", dump.n, "Simulated sample size");
  kdump->add_option("--sigma-eps-sq", dump.sigma_eps_sq, "Kim design treatment noise variance")
      ->check(CLI::PositiveNumber);
  kdump->add_option("--seed", dump.seed, "Seed");
  kdump->add_option("--out", dump.out, "Kernel CSV path")->required();
  kdump->add_option("--features-out", dump.features_out, "Balancing feature CSV path");
  kdump->add_option("--pcs", dump.pcs, "Principal components for --features-out");
  kdump->add_option("--mode", dump.mode, "only or plus, for --features-out");
  dump.model.add_to(*kdump);

  std::vector<std::string> storage{"fkb"};
  storage.insert(storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : storage) argv.push_back(s.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    log << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    log << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    log << "error: " << e.what() << '\n';
    return kValidationError;
  }

  try {
    if (simulate->parsed()) return run_simulate(sim, log);
    if (analyze->parsed()) return run_analyze(an, log);
    return run_kernel_dump(dump, log);
  } catch (const ValidationError& e) {
    log << "error: " << e.what() << '\n';
    return kValidationError;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
}

}  // namespace fkb::cli
